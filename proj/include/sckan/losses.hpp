#pragma once

#include <cmath>
#include <optional>

#include "sckan/ops.hpp"
#include "sckan/tensor.hpp"
#include "sckan/volume.hpp"

namespace sckan {

inline constexpr double kDiceEps = 1e-5;
inline constexpr double kProbClamp = 1e-12;

// Hybrid segmentation loss: (soft Dice on the foreground channel + mean
// voxelwise cross-entropy with probability clamping) / 2. probs must be a
// valid per-voxel distribution of shape [|C|, ...spatial].
inline Tensor hybrid_loss(const Tensor& probs, const Mask& target) {
  require(probs.shape().size() >= 2, "hybrid_loss: probs must be [C, ...]");
  const int c = probs.shape()[0];
  std::int64_t n = 1;
  for (std::size_t i = 1; i < probs.shape().size(); ++i) n *= probs.shape()[i];
  require(static_cast<std::int64_t>(target.size()) == n,
          "hybrid_loss: target/probs voxel count mismatch");

  Tensor flat = reshape(probs, {c, static_cast<int>(n)});
  std::vector<int> labels(target.data.begin(), target.data.end());
  for (int l : labels) require(l >= 0 && l < c, "hybrid_loss: target label out of range");

  Tensor ce = neg(mean(log_t(clamp_min(select_class(flat, labels), kProbClamp))));

  Tensor p_fg = slice_row(flat, 1);
  std::vector<double> y(static_cast<std::size_t>(n));
  double y_sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    y[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : 0.0;
    y_sum += y[static_cast<std::size_t>(i)];
  }
  Tensor yt = Tensor::from_vector({static_cast<int>(n)}, std::move(y));
  Tensor inter = dot(p_fg, yt);
  Tensor num = add_scalar(mul_scalar(inter, 2.0), kDiceEps);
  Tensor den = add_scalar(sum(p_fg), y_sum + kDiceEps);
  Tensor dice = add_scalar(neg(div(num, den)), 1.0);

  return mul_scalar(add(dice, ce), 0.5);
}

// Gaussian warm-up lambda_gs = exp(-5 (1 - s/s_max)^2).
inline double warmup(std::int64_t s, std::int64_t s_max) {
  require(s_max > 0 && s >= 0 && s <= s_max, "warmup: need 0 <= s <= s_max, s_max > 0");
  const double r = 1.0 - static_cast<double>(s) / static_cast<double>(s_max);
  return std::exp(-5.0 * r * r);
}

// L_total = L_seg_l + L_seg_u + L_proto_l + lambda_gs * (L_proto_u + L_spcl).
// Absent terms contribute zero.
inline Tensor total_loss(const std::optional<Tensor>& seg_l, const std::optional<Tensor>& seg_u,
                         const std::optional<Tensor>& proto_l,
                         const std::optional<Tensor>& proto_u,
                         const std::optional<Tensor>& spcl, double lambda_gs) {
  Tensor total = Tensor::scalar(0.0);
  if (seg_l) total = add(total, *seg_l);
  if (seg_u) total = add(total, *seg_u);
  if (proto_l) total = add(total, *proto_l);
  Tensor warmed = Tensor::scalar(0.0);
  bool any_warmed = false;
  if (proto_u) {
    warmed = add(warmed, *proto_u);
    any_warmed = true;
  }
  if (spcl) {
    warmed = add(warmed, *spcl);
    any_warmed = true;
  }
  if (any_warmed) total = add(total, mul_scalar(warmed, lambda_gs));
  return total;
}

}  // namespace sckan
