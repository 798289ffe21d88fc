#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "sckan/ops.hpp"
#include "sckan/rng.hpp"
#include "sckan/tensor.hpp"
#include "sckan/volume.hpp"

namespace sckan {

class InsufficientVoxels : public std::runtime_error {
 public:
  InsufficientVoxels(int have, int want)
      : std::runtime_error("k-means needs at least " + std::to_string(want) +
                           " voxels, have " + std::to_string(have)) {}
};

using Coord = std::array<int, 3>;

// K-means state over the valid voxel coordinates of one class mask. The
// decomposition is purely geometric: cluster assignments never carry
// gradients.
struct RegionDecomposition {
  std::vector<int> assignments;                 // per valid voxel, in [0,K)
  std::vector<std::array<double, 3>> centers;   // voxel units
  std::vector<int> order;                       // anatomical rank -> cluster id
  int class_id = 0;
  int valid_count = 0;
  bool converged = false;
};

namespace detail {

inline double sqdist(const Coord& c, const std::array<double, 3>& m) {
  const double dx = c[0] - m[0], dy = c[1] - m[1], dz = c[2] - m[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding, max 50 iterations, convergence
// when no assignment changes. An empty cluster is repaired by moving the
// point farthest from its current center into it.
inline RegionDecomposition kmeans_spatial(const std::vector<Coord>& coords, int k, Rng& rng) {
  const int n = static_cast<int>(coords.size());
  require(k >= 1, "kmeans_spatial: K must be >= 1");
  if (n < k) throw InsufficientVoxels(n, k);

  RegionDecomposition dec;
  dec.valid_count = n;
  dec.centers.resize(static_cast<std::size_t>(k));
  dec.assignments.assign(static_cast<std::size_t>(n), 0);

  // k-means++ seeding
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  {
    const int first = rng.index(n);
    const Coord& c = coords[static_cast<std::size_t>(first)];
    dec.centers[0] = {static_cast<double>(c[0]), static_cast<double>(c[1]), static_cast<double>(c[2])};
  }
  for (int ci = 1; ci < k; ++ci) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)],
                                                 detail::sqdist(coords[static_cast<std::size_t>(i)], dec.centers[static_cast<std::size_t>(ci - 1)]));
      total += d2[static_cast<std::size_t>(i)];
    }
    int pick = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(n);
    }
    const Coord& c = coords[static_cast<std::size_t>(pick)];
    dec.centers[static_cast<std::size_t>(ci)] = {static_cast<double>(c[0]), static_cast<double>(c[1]), static_cast<double>(c[2])};
  }

  const int max_iters = 50;
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = detail::sqdist(coords[static_cast<std::size_t>(i)], dec.centers[0]);
      for (int ci = 1; ci < k; ++ci) {
        const double d = detail::sqdist(coords[static_cast<std::size_t>(i)], dec.centers[static_cast<std::size_t>(ci)]);
        if (d < bd) {
          bd = d;
          best = ci;
        }
      }
      if (dec.assignments[static_cast<std::size_t>(i)] != best) {
        dec.assignments[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }

    // Empty-cluster repair: reassign the globally farthest point.
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int a : dec.assignments) ++counts[static_cast<std::size_t>(a)];
    for (int ci = 0; ci < k; ++ci) {
      if (counts[static_cast<std::size_t>(ci)] > 0) continue;
      int far = -1;
      double fd = -1.0;
      for (int i = 0; i < n; ++i) {
        const int a = dec.assignments[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(a)] <= 1) continue;
        const double d = detail::sqdist(coords[static_cast<std::size_t>(i)], dec.centers[static_cast<std::size_t>(a)]);
        if (d > fd) {
          fd = d;
          far = i;
        }
      }
      if (far >= 0) {
        --counts[static_cast<std::size_t>(dec.assignments[static_cast<std::size_t>(far)])];
        dec.assignments[static_cast<std::size_t>(far)] = ci;
        ++counts[static_cast<std::size_t>(ci)];
        changed = true;
      }
    }

    // Recompute centers as exact means of assigned coordinates.
    std::vector<std::array<double, 3>> sums(static_cast<std::size_t>(k), {0.0, 0.0, 0.0});
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < n; ++i) {
      const int a = dec.assignments[static_cast<std::size_t>(i)];
      for (int d = 0; d < 3; ++d) sums[static_cast<std::size_t>(a)][static_cast<std::size_t>(d)] += coords[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
      ++counts[static_cast<std::size_t>(a)];
    }
    for (int ci = 0; ci < k; ++ci)
      if (counts[static_cast<std::size_t>(ci)] > 0)
        for (int d = 0; d < 3; ++d)
          dec.centers[static_cast<std::size_t>(ci)][static_cast<std::size_t>(d)] =
              sums[static_cast<std::size_t>(ci)][static_cast<std::size_t>(d)] / counts[static_cast<std::size_t>(ci)];

    if (!changed) {
      dec.converged = true;
      break;
    }
  }
  return dec;
}

namespace detail {

// (z, y, x) lexicographic comparison of centers, the tie and fallback rule.
inline bool center_less_zyx(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  if (a[2] != b[2]) return a[2] < b[2];
  if (a[1] != b[1]) return a[1] < b[1];
  return a[0] < b[0];
}

}  // namespace detail

// Consistent anatomical ordering of cluster centers: project onto the
// principal axis of all valid coordinates (sign fixed so the axis component
// with the largest magnitude is positive, ties toward the earlier axis) and
// sort by ascending projection. Degenerate covariance falls back to (z,y,x)
// lexicographic center order.
inline std::vector<int> order_regions(const std::vector<std::array<double, 3>>& centers,
                                      const std::vector<Coord>& all_coords) {
  const int k = static_cast<int>(centers.size());
  require(k >= 1, "order_regions: need at least one center");
  require(!all_coords.empty(), "order_regions: need at least one coordinate");

  std::vector<int> order(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) order[static_cast<std::size_t>(i)] = i;
  if (k == 1) return order;

  std::array<double, 3> mean{0, 0, 0};
  for (const auto& c : all_coords)
    for (int d = 0; d < 3; ++d) mean[static_cast<std::size_t>(d)] += c[static_cast<std::size_t>(d)];
  for (double& m : mean) m /= static_cast<double>(all_coords.size());

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& c : all_coords) {
    Eigen::Vector3d v(c[0] - mean[0], c[1] - mean[1], c[2] - mean[2]);
    cov += v * v.transpose();
  }
  cov /= static_cast<double>(all_coords.size());

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  const double top = es.eigenvalues()(2);
  const bool degenerate = !(top > 1e-12);
  if (degenerate) {
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return detail::center_less_zyx(centers[static_cast<std::size_t>(a)], centers[static_cast<std::size_t>(b)]);
    });
    return order;
  }

  Eigen::Vector3d axis = es.eigenvectors().col(2);
  // Sign convention: the largest-magnitude component is positive; on ties
  // the earlier axis wins.
  int big = 0;
  for (int d = 1; d < 3; ++d)
    if (std::abs(axis(d)) > std::abs(axis(big))) big = d;
  if (axis(big) < 0.0) axis = -axis;

  std::vector<double> proj(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i)
    proj[static_cast<std::size_t>(i)] = axis(0) * (centers[static_cast<std::size_t>(i)][0] - mean[0]) +
                                        axis(1) * (centers[static_cast<std::size_t>(i)][1] - mean[1]) +
                                        axis(2) * (centers[static_cast<std::size_t>(i)][2] - mean[2]);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (proj[static_cast<std::size_t>(a)] != proj[static_cast<std::size_t>(b)])
      return proj[static_cast<std::size_t>(a)] < proj[static_cast<std::size_t>(b)];
    return detail::center_less_zyx(centers[static_cast<std::size_t>(a)], centers[static_cast<std::size_t>(b)]);
  });
  return order;
}

enum class Source { kLabeled, kUnlabeled };

// K anatomically ordered subregion prototypes plus their mean for one
// (sample, class); each prototype is the exact mean feature over its region.
struct PrototypeSet {
  int class_id = 0;
  std::vector<Tensor> subregion;  // K tensors of shape [D]
  Tensor mean;
  Source source = Source::kLabeled;
};

// features: [D,h,w,z] at feature resolution; mask aligned to the same grid.
// Returns nullopt (Skipped) when the class has fewer than K valid voxels.
inline std::optional<PrototypeSet> extract_prototypes(const Tensor& features, const Mask& mask,
                                                      int class_id, int k, Rng& rng,
                                                      Source source = Source::kLabeled) {
  require(features.shape().size() == 4, "extract_prototypes: features must be [D,h,w,z]");
  require(features.shape()[1] == mask.dims[0] && features.shape()[2] == mask.dims[1] &&
              features.shape()[3] == mask.dims[2],
          "extract_prototypes: mask not aligned with features");
  const int d = features.shape()[0];
  const int h = mask.dims[0], w = mask.dims[1], z = mask.dims[2];

  std::vector<Coord> coords;
  std::vector<int> flat;  // flattened spatial index per valid voxel
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int kk = 0; kk < z; ++kk)
        if (mask.at(i, j, kk) == class_id) {
          coords.push_back({i, j, kk});
          flat.push_back((i * w + j) * z + kk);
        }
  if (static_cast<int>(coords.size()) < k) return std::nullopt;

  RegionDecomposition dec = kmeans_spatial(coords, k, rng);
  dec.class_id = class_id;
  dec.order = order_regions(dec.centers, coords);

  Tensor fmat = reshape(features, {d, h * w * z});
  PrototypeSet set;
  set.class_id = class_id;
  set.source = source;
  set.subregion.reserve(static_cast<std::size_t>(k));
  for (int rank = 0; rank < k; ++rank) {
    const int cluster = dec.order[static_cast<std::size_t>(rank)];
    std::vector<int> cols;
    for (std::size_t i = 0; i < coords.size(); ++i)
      if (dec.assignments[i] == cluster) cols.push_back(flat[i]);
    set.subregion.push_back(masked_mean_cols(fmat, cols));
  }
  Tensor acc = set.subregion[0];
  for (int rank = 1; rank < k; ++rank) acc = add(acc, set.subregion[static_cast<std::size_t>(rank)]);
  set.mean = mul_scalar(acc, 1.0 / static_cast<double>(k));
  return set;
}

}  // namespace sckan
