#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sckan/phantom.hpp"
#include "sckan/volume.hpp"

namespace sckan {

struct MetricReport {
  double dice = 0.0;
  double jaccard = 0.0;
  double hd95 = 0.0;
  double asd = 0.0;
  bool surface_defined = false;
};

// dice = 2|P^G| / (|P|+|G|), jaccard = |P^G| / |PvG|; both-empty masks score 1.
inline std::pair<double, double> overlap_metrics(const Mask& pred, const Mask& gt) {
  require(pred.dims == gt.dims, "overlap_metrics: shape mismatch");
  std::size_t p = 0, g = 0, inter = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool pi = pred.data[i] != 0, gi = gt.data[i] != 0;
    p += pi;
    g += gi;
    inter += pi && gi;
  }
  if (p + g == 0) return {1.0, 1.0};
  const double dice = 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
  const double uni = static_cast<double>(p + g - inter);
  const double jaccard = uni == 0.0 ? 1.0 : static_cast<double>(inter) / uni;
  return {dice, jaccard};
}

namespace detail {

// Foreground voxels with at least one background 6-neighbor; out-of-bounds
// counts as background.
inline std::vector<std::array<int, 3>> surface_voxels(const Mask& m) {
  std::vector<std::array<int, 3>> out;
  const int a = m.dims[0], b = m.dims[1], c = m.dims[2];
  constexpr int kNb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < b; ++j)
      for (int k = 0; k < c; ++k) {
        if (!m.at(i, j, k)) continue;
        bool boundary = false;
        for (const auto& d : kNb) {
          const int ni = i + d[0], nj = j + d[1], nk = k + d[2];
          if (ni < 0 || ni >= a || nj < 0 || nj >= b || nk < 0 || nk >= c || !m.at(ni, nj, nk)) {
            boundary = true;
            break;
          }
        }
        if (boundary) out.push_back({i, j, k});
      }
  return out;
}

inline void nearest_distances(const std::vector<std::array<int, 3>>& from,
                              const std::vector<std::array<int, 3>>& to,
                              std::vector<double>& out) {
  for (const auto& f : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : to) {
      const double dx = f[0] - t[0], dy = f[1] - t[1], dz = f[2] - t[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out.push_back(std::sqrt(best));
  }
}

}  // namespace detail

// Symmetric surface distances in voxel units: asd is the mean and hd95 the
// nearest-rank 95th percentile of the concatenated d(P->G) and d(G->P) lists.
// defined is false when either surface is empty.
inline std::tuple<double, double, bool> surface_metrics(const Mask& pred, const Mask& gt) {
  require(pred.dims == gt.dims, "surface_metrics: shape mismatch");
  const auto sp = detail::surface_voxels(pred);
  const auto sg = detail::surface_voxels(gt);
  if (sp.empty() || sg.empty()) return {0.0, 0.0, false};
  std::vector<double> dists;
  dists.reserve(sp.size() + sg.size());
  detail::nearest_distances(sp, sg, dists);
  detail::nearest_distances(sg, sp, dists);
  // Summing in sorted order makes asd exactly symmetric in (pred, gt).
  std::sort(dists.begin(), dists.end());
  double mean = 0.0;
  for (double d : dists) mean += d;
  mean /= static_cast<double>(dists.size());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(dists.size())));
  const double hd95 = dists[std::max<std::size_t>(rank, 1) - 1];
  return {hd95, mean, true};
}

inline MetricReport evaluate_masks(const Mask& pred, const Mask& gt) {
  MetricReport r;
  std::tie(r.dice, r.jaccard) = overlap_metrics(pred, gt);
  std::tie(r.hd95, r.asd, r.surface_defined) = surface_metrics(pred, gt);
  return r;
}

// --- labeled/unlabeled Dice gap ------------------------------------------------

class GapUndefined : public std::runtime_error {
 public:
  GapUndefined() : std::runtime_error("gap_report: missing a role") {}
};

struct GapReport {
  double labeled_dice = 0.0;
  double unlabeled_dice = 0.0;
  double gap = 0.0;  // labeled - unlabeled
};

inline GapReport gap_report(const std::vector<std::pair<Role, double>>& per_case) {
  double l = 0.0, u = 0.0;
  int nl = 0, nu = 0;
  for (const auto& [role, dice] : per_case) {
    if (role == Role::kLabeled) {
      l += dice;
      ++nl;
    } else if (role == Role::kUnlabeled) {
      u += dice;
      ++nu;
    }
  }
  if (nl == 0 || nu == 0) throw GapUndefined();
  GapReport r;
  r.labeled_dice = l / nl;
  r.unlabeled_dice = u / nu;
  r.gap = r.labeled_dice - r.unlabeled_dice;
  return r;
}

// --- reporting -----------------------------------------------------------------

struct CaseMetrics {
  int case_id = 0;
  Role role = Role::kTest;
  MetricReport metrics;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_metrics_csv(const std::string& path, const std::vector<CaseMetrics>& cases) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "case_id,role,dice,jaccard,hd95,asd\n";
  for (const auto& c : cases) {
    out << c.case_id << ',' << role_name(c.role) << ',' << format_double(c.metrics.dice) << ','
        << format_double(c.metrics.jaccard) << ','
        << (c.metrics.surface_defined ? format_double(c.metrics.hd95) : "nan") << ','
        << (c.metrics.surface_defined ? format_double(c.metrics.asd) : "nan") << '\n';
  }
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  int count = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  m.count = static_cast<int>(xs.size());
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

// JSON summary over a set of cases: mean+-std per metric (surface metrics only
// over cases where they are defined), distances reported in voxel units.
inline nlohmann::json metrics_summary(const std::vector<CaseMetrics>& cases) {
  std::vector<double> dice, jac, hd, asd;
  for (const auto& c : cases) {
    dice.push_back(c.metrics.dice);
    jac.push_back(c.metrics.jaccard);
    if (c.metrics.surface_defined) {
      hd.push_back(c.metrics.hd95);
      asd.push_back(c.metrics.asd);
    }
  }
  auto pack = [](const MeanStd& m) {
    return nlohmann::json{{"mean", m.mean}, {"std", m.stddev}, {"count", m.count}};
  };
  nlohmann::json j;
  j["dice"] = pack(mean_std(dice));
  j["jaccard"] = pack(mean_std(jac));
  j["hd95"] = pack(mean_std(hd));
  j["asd"] = pack(mean_std(asd));
  j["distance_unit"] = "voxel";
  return j;
}

}  // namespace sckan
