#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sckan/rng.hpp"
#include "sckan/volume.hpp"

namespace sckan {

class GenerationFailed : public std::runtime_error {
 public:
  explicit GenerationFailed(std::uint64_t seed)
      : std::runtime_error("phantom generation failed for seed " + std::to_string(seed)),
        seed(seed) {}
  std::uint64_t seed;
};

// Synthetic pancreas stand-in: a curved tube with a tapering radius rendered
// into a noisy background with bright distractor ellipsoids. Elongation makes
// the head/body/tail ordering of the spatial decomposition testable.
struct Phantom {
  Volume volume;                       // intensities in [0,1]
  Mask mask;                           // {0,1}
  std::array<double, 3> gen_axis{};    // unit spine direction (head -> tail)
  std::uint64_t seed = 0;
};

namespace detail {

struct Vec3 {
  double x, y, z;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline Vec3 bezier(const Vec3& p0, const Vec3& p1, const Vec3& p2, double t) {
  const double u = 1.0 - t;
  return p0 * (u * u) + p1 * (2.0 * u * t) + p2 * (t * t);
}

}  // namespace detail

inline Phantom gen_phantom(std::uint64_t seed, const std::array<int, 3>& shape) {
  for (int dim : shape) require(dim >= 16, "gen_phantom: each dim must be >= 16");

  for (int attempt = 0; attempt < 20; ++attempt) {
    Rng rng(Rng::splitmix64(seed) ^ (0xabcdef1234567890ULL + attempt));
    const double sx = shape[0], sy = shape[1], sz = shape[2];
    const double min_dim = std::min({sx, sy, sz});

    // Spine endpoints: roughly opposite sides of the volume along a random
    // direction, kept away from the borders so the mask stays in bounds.
    const double margin = 0.22 * min_dim;
    detail::Vec3 center{sx / 2 + rng.uniform(-0.05, 0.05) * sx,
                        sy / 2 + rng.uniform(-0.05, 0.05) * sy,
                        sz / 2 + rng.uniform(-0.05, 0.05) * sz};
    double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    double phi = std::acos(rng.uniform(-1.0, 1.0));
    detail::Vec3 axis{std::sin(phi) * std::cos(theta), std::sin(phi) * std::sin(theta),
                      std::cos(phi)};
    const double half_len = rng.uniform(0.30, 0.38) * min_dim;
    detail::Vec3 p0 = center - axis * half_len;
    detail::Vec3 p2 = center + axis * half_len;

    // Perpendicular bend for the control point.
    detail::Vec3 up = std::abs(axis.z) < 0.9 ? detail::Vec3{0, 0, 1} : detail::Vec3{1, 0, 0};
    detail::Vec3 perp{axis.y * up.z - axis.z * up.y, axis.z * up.x - axis.x * up.z,
                      axis.x * up.y - axis.y * up.x};
    perp = perp * (1.0 / perp.norm());
    const double bend = rng.uniform(0.08, 0.22) * min_dim * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    detail::Vec3 p1 = center + perp * bend;

    const double r_head = rng.uniform(0.085, 0.115) * min_dim;
    const double r_tail = rng.uniform(0.040, 0.060) * min_dim;

    Phantom ph;
    ph.seed = seed;
    ph.volume = Volume(shape[0], shape[1], shape[2]);
    ph.mask = Mask(shape[0], shape[1], shape[2]);
    const double an = (p2 - p0).norm();
    ph.gen_axis = {(p2.x - p0.x) / an, (p2.y - p0.y) / an, (p2.z - p0.z) / an};

    // Union of spheres along the spine approximates the tube.
    const int spine_samples = 96;
    bool in_bounds = true;
    for (int si = 0; si <= spine_samples && in_bounds; ++si) {
      const double t = static_cast<double>(si) / spine_samples;
      const detail::Vec3 c = detail::bezier(p0, p1, p2, t);
      const double r = r_head + (r_tail - r_head) * t;
      if (c.x - r < 1.0 || c.x + r > sx - 2.0 || c.y - r < 1.0 || c.y + r > sy - 2.0 ||
          c.z - r < 1.0 || c.z + r > sz - 2.0) {
        in_bounds = false;
        break;
      }
      const int x0 = std::max(0, static_cast<int>(std::floor(c.x - r)));
      const int x1 = std::min(shape[0] - 1, static_cast<int>(std::ceil(c.x + r)));
      const int y0 = std::max(0, static_cast<int>(std::floor(c.y - r)));
      const int y1 = std::min(shape[1] - 1, static_cast<int>(std::ceil(c.y + r)));
      const int z0 = std::max(0, static_cast<int>(std::floor(c.z - r)));
      const int z1 = std::min(shape[2] - 1, static_cast<int>(std::ceil(c.z + r)));
      for (int i = x0; i <= x1; ++i)
        for (int j = y0; j <= y1; ++j)
          for (int k = z0; k <= z1; ++k) {
            const double dx = i - c.x, dy = j - c.y, dz = k - c.z;
            if (dx * dx + dy * dy + dz * dz <= r * r) ph.mask.at(i, j, k) = 1;
          }
    }
    if (!in_bounds) continue;

    std::size_t fg = 0;
    for (auto v : ph.mask.data) fg += v;
    const double frac = static_cast<double>(fg) / static_cast<double>(ph.mask.size());
    if (frac < 0.005 || frac > 0.15) continue;

    // Intensity model: noisy background, brighter textured tube.
    for (std::size_t i = 0; i < ph.volume.size(); ++i) {
      const double base = ph.mask.data[i] ? 0.68 : 0.30;
      const double noise = ph.mask.data[i] ? 0.06 : 0.09;
      ph.volume.data[i] = std::clamp(base + rng.normal(0.0, noise), 0.0, 1.0);
    }

    // Distractor ellipsoids: tube-like intensity, never overlapping the mask.
    const int n_distract = 2 + rng.index(4);
    for (int e = 0; e < n_distract; ++e) {
      for (int tries = 0; tries < 30; ++tries) {
        const detail::Vec3 c{rng.uniform(6.0, sx - 7.0), rng.uniform(6.0, sy - 7.0),
                             rng.uniform(6.0, sz - 7.0)};
        const detail::Vec3 rad{rng.uniform(0.05, 0.11) * min_dim, rng.uniform(0.05, 0.11) * min_dim,
                               rng.uniform(0.05, 0.11) * min_dim};
        const int x0 = std::max(0, static_cast<int>(c.x - rad.x)), x1 = std::min(shape[0] - 1, static_cast<int>(c.x + rad.x));
        const int y0 = std::max(0, static_cast<int>(c.y - rad.y)), y1 = std::min(shape[1] - 1, static_cast<int>(c.y + rad.y));
        const int z0 = std::max(0, static_cast<int>(c.z - rad.z)), z1 = std::min(shape[2] - 1, static_cast<int>(c.z + rad.z));
        bool clear = true;
        for (int i = x0; i <= x1 && clear; ++i)
          for (int j = y0; j <= y1 && clear; ++j)
            for (int k = z0; k <= z1 && clear; ++k) {
              const double u = (i - c.x) / rad.x, v = (j - c.y) / rad.y, w = (k - c.z) / rad.z;
              if (u * u + v * v + w * w <= 1.0 && ph.mask.at(i, j, k)) clear = false;
            }
        if (!clear) continue;
        for (int i = x0; i <= x1; ++i)
          for (int j = y0; j <= y1; ++j)
            for (int k = z0; k <= z1; ++k) {
              const double u = (i - c.x) / rad.x, v = (j - c.y) / rad.y, w = (k - c.z) / rad.z;
              if (u * u + v * v + w * w <= 1.0)
                ph.volume.at(i, j, k) =
                    std::clamp(0.64 + rng.normal(0.0, 0.06), 0.0, 1.0);
            }
        break;
      }
    }
    return ph;
  }
  throw GenerationFailed(seed);
}

// Uniform random crop guaranteed (by rejection, then a mask-centered
// fallback) to contain at least one foreground voxel.
inline std::pair<Volume, Mask> random_crop(const Phantom& ph, const std::array<int, 3>& crop,
                                           Rng& rng) {
  for (int a = 0; a < 3; ++a)
    require(crop[static_cast<std::size_t>(a)] <= ph.volume.dims[static_cast<std::size_t>(a)],
            "random_crop: crop larger than volume");
  auto take = [&](const std::array<int, 3>& corner) {
    Volume v(crop[0], crop[1], crop[2]);
    Mask m(crop[0], crop[1], crop[2]);
    for (int i = 0; i < crop[0]; ++i)
      for (int j = 0; j < crop[1]; ++j)
        for (int k = 0; k < crop[2]; ++k) {
          v.at(i, j, k) = ph.volume.at(corner[0] + i, corner[1] + j, corner[2] + k);
          m.at(i, j, k) = ph.mask.at(corner[0] + i, corner[1] + j, corner[2] + k);
        }
    return std::pair{std::move(v), std::move(m)};
  };
  auto has_fg = [](const Mask& m) {
    for (auto v : m.data)
      if (v) return true;
    return false;
  };

  for (int tries = 0; tries < 50; ++tries) {
    std::array<int, 3> corner{};
    for (int a = 0; a < 3; ++a) {
      const int span = ph.volume.dims[static_cast<std::size_t>(a)] - crop[static_cast<std::size_t>(a)];
      corner[static_cast<std::size_t>(a)] = span == 0 ? 0 : rng.index(span + 1);
    }
    auto out = take(corner);
    if (has_fg(out.second)) return out;
  }

  // Fallback: center the crop on the mask centroid.
  double cx = 0, cy = 0, cz = 0;
  std::size_t n = 0;
  for (int i = 0; i < ph.mask.dims[0]; ++i)
    for (int j = 0; j < ph.mask.dims[1]; ++j)
      for (int k = 0; k < ph.mask.dims[2]; ++k)
        if (ph.mask.at(i, j, k)) {
          cx += i;
          cy += j;
          cz += k;
          ++n;
        }
  require(n > 0, "random_crop: phantom has empty mask");
  std::array<double, 3> c{cx / n, cy / n, cz / n};
  std::array<int, 3> corner{};
  for (int a = 0; a < 3; ++a) {
    const int want = static_cast<int>(std::llround(c[static_cast<std::size_t>(a)])) -
                     crop[static_cast<std::size_t>(a)] / 2;
    corner[static_cast<std::size_t>(a)] = std::clamp(
        want, 0, ph.volume.dims[static_cast<std::size_t>(a)] - crop[static_cast<std::size_t>(a)]);
  }
  return take(corner);
}

// --- dataset manifest --------------------------------------------------------

enum class Role { kLabeled, kUnlabeled, kTest };

inline std::string role_name(Role r) {
  switch (r) {
    case Role::kLabeled: return "labeled";
    case Role::kUnlabeled: return "unlabeled";
    case Role::kTest: return "test";
  }
  return "?";
}

inline Role role_from_name(const std::string& s) {
  if (s == "labeled") return Role::kLabeled;
  if (s == "unlabeled") return Role::kUnlabeled;
  if (s == "test") return Role::kTest;
  throw std::runtime_error("unknown role '" + s + "'");
}

struct SplitManifest {
  std::uint64_t dataset_seed = 0;
  std::array<int, 3> shape{};
  std::vector<Role> roles;  // index = phantom id

  std::vector<int> ids_with(Role r) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(roles.size()); ++i)
      if (roles[static_cast<std::size_t>(i)] == r) out.push_back(i);
    return out;
  }
};

// Role assignment: a seeded shuffle sliced by (labeled, test, unlabeled)
// counts. Labeled and test get at least one phantom each.
inline SplitManifest make_split(std::uint64_t dataset_seed, int count,
                                const std::array<int, 3>& shape, double labeled_frac,
                                double test_frac) {
  require(count >= 3, "make_split: need at least 3 phantoms");
  require(labeled_frac > 0.0 && test_frac > 0.0 && labeled_frac + test_frac < 1.0,
          "make_split: bad split fractions");
  SplitManifest m;
  m.dataset_seed = dataset_seed;
  m.shape = shape;
  m.roles.assign(static_cast<std::size_t>(count), Role::kUnlabeled);
  std::vector<int> order(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(Rng::splitmix64(dataset_seed) ^ 0x5eedfacecafe1234ULL);
  for (int i = count - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.index(i + 1))]);
  const int n_labeled = std::max(1, static_cast<int>(std::llround(labeled_frac * count)));
  const int n_test = std::max(1, static_cast<int>(std::llround(test_frac * count)));
  require(n_labeled + n_test < count, "make_split: no unlabeled phantoms left");
  for (int i = 0; i < n_labeled; ++i) m.roles[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = Role::kLabeled;
  for (int i = 0; i < n_test; ++i)
    m.roles[static_cast<std::size_t>(order[static_cast<std::size_t>(n_labeled + i)])] = Role::kTest;
  return m;
}

inline void write_manifest(const std::string& path, const SplitManifest& m) {
  nlohmann::json j;
  j["dataset_seed"] = m.dataset_seed;
  j["shape"] = m.shape;
  nlohmann::json entries = nlohmann::json::array();
  for (int i = 0; i < static_cast<int>(m.roles.size()); ++i)
    entries.push_back({{"id", i}, {"role", role_name(m.roles[static_cast<std::size_t>(i)])}});
  j["phantoms"] = entries;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

inline SplitManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  SplitManifest m;
  m.dataset_seed = j.at("dataset_seed").get<std::uint64_t>();
  const auto shape = j.at("shape").get<std::vector<int>>();
  require(shape.size() == 3, "manifest: shape must have 3 dims");
  std::copy(shape.begin(), shape.end(), m.shape.begin());
  const auto& entries = j.at("phantoms");
  m.roles.resize(entries.size());
  for (const auto& e : entries) {
    const int id = e.at("id").get<int>();
    require(id >= 0 && id < static_cast<int>(m.roles.size()), "manifest: id out of range");
    m.roles[static_cast<std::size_t>(id)] = role_from_name(e.at("role").get<std::string>());
  }
  return m;
}

// Phantom id -> per-phantom generation seed (independent of dataset size).
inline std::uint64_t phantom_seed(std::uint64_t dataset_seed, int id) {
  std::uint64_t x = dataset_seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(id + 1));
  return Rng::splitmix64(x);
}

}  // namespace sckan
