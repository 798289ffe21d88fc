#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sckan/rng.hpp"
#include "sckan/spline.hpp"
#include "sckan/tensor.hpp"

namespace sckan {

// One KAN layer: every edge (i -> j) applies a learnable spline plus a fixed
// smooth base activation, and outputs sum over inputs:
//   y_j = sum_i base_weight[j,i] * silu(x_i)
//       + sum_i spline_scale[j,i] * sum_b spline_coeffs[j,i,b] * B_b(clamp(x_i))
// The base-activation branch can be disabled (use_base) to match the bare
// spline-sum reading of the layer.
struct KanLayerParams {
  int in_dim = 0;
  int out_dim = 0;
  SplineGrid grid;
  Tensor spline_coeffs;  // [out_dim, in_dim, G+p]
  Tensor base_weight;    // [out_dim, in_dim]
  Tensor spline_scale;   // [out_dim, in_dim]
  bool use_base = true;

  std::vector<Tensor> parameters() const { return {spline_coeffs, base_weight, spline_scale}; }
};

inline KanLayerParams kan_init(int in_dim, int out_dim, int grid_intervals, int degree,
                               Rng& rng, bool use_base = true) {
  require(in_dim >= 1 && out_dim >= 1, "kan_init: dims must be >= 1");
  KanLayerParams p;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  p.grid = SplineGrid::make(grid_intervals, degree, -1.0, 1.0);
  p.use_base = use_base;
  const int nb = p.grid.num_basis();
  const double coeff_scale = 0.1 / std::sqrt(static_cast<double>(in_dim));
  p.spline_coeffs = Tensor::param_normal({out_dim, in_dim, nb}, rng, coeff_scale);
  p.base_weight = Tensor::param_normal({out_dim, in_dim}, rng,
                                       std::sqrt(2.0 / static_cast<double>(in_dim)));
  p.spline_scale = Tensor::param(
      {out_dim, in_dim}, std::vector<double>(static_cast<std::size_t>(out_dim) * in_dim, 1.0));
  return p;
}

// x: [N, in_dim] -> [N, out_dim]; differentiable in x and all parameters.
inline Tensor kan_forward(const Tensor& x, const KanLayerParams& p) {
  require(x.shape().size() == 2 && x.shape()[1] == p.in_dim,
          "kan_forward: input must be [N," + std::to_string(p.in_dim) + "], got " +
              shape_str(x.shape()));
  const int n = x.shape()[0], in = p.in_dim, out = p.out_dim, nb = p.grid.num_basis();

  // Per (sample, input): basis values, basis derivatives, silu and its slope.
  std::vector<double> basis(static_cast<std::size_t>(n) * in * nb);
  std::vector<double> dbasis(static_cast<std::size_t>(n) * in * nb);
  std::vector<double> act(static_cast<std::size_t>(n) * in), dact(static_cast<std::size_t>(n) * in);
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < in; ++i) {
      const double xv = x[static_cast<std::size_t>(s) * in + i];
      const std::size_t off = (static_cast<std::size_t>(s) * in + i) * nb;
      bspline_basis_and_deriv(xv, p.grid, basis.data() + off, dbasis.data() + off);
      const double sg = 1.0 / (1.0 + std::exp(-xv));
      act[static_cast<std::size_t>(s) * in + i] = xv * sg;
      dact[static_cast<std::size_t>(s) * in + i] = sg * (1.0 + xv * (1.0 - sg));
    }

  const auto& cf = p.spline_coeffs.values();
  const auto& bw = p.base_weight.values();
  const auto& sc = p.spline_scale.values();
  std::vector<double> y(static_cast<std::size_t>(n) * out, 0.0);
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < out; ++o) {
      double acc = 0.0;
      for (int i = 0; i < in; ++i) {
        const std::size_t e = static_cast<std::size_t>(o) * in + i;
        const std::size_t boff = (static_cast<std::size_t>(s) * in + i) * nb;
        double spl = 0.0;
        for (int b = 0; b < nb; ++b) spl += cf[e * nb + b] * basis[boff + b];
        acc += sc[e] * spl;
        if (p.use_base) acc += bw[e] * act[static_cast<std::size_t>(s) * in + i];
      }
      y[static_cast<std::size_t>(s) * out + o] = acc;
    }

  Tensor outt = Tensor::make_op({n, out}, std::move(y),
                                {x, p.spline_coeffs, p.base_weight, p.spline_scale}, nullptr);
  if (outt.requires_grad()) {
    auto xn = x.node(), cn = p.spline_coeffs.node(), bn = p.base_weight.node(),
         sn = p.spline_scale.node(), on = outt.node();
    const bool use_base = p.use_base;
    outt.node()->backward_fn = [xn, cn, bn, sn, n, in, out, nb, use_base,
                                basis = std::move(basis), dbasis = std::move(dbasis),
                                act = std::move(act), dact = std::move(dact), onp = on.get()] {
      const auto& cf = cn->value;
      const auto& bw = bn->value;
      const auto& sc = sn->value;
      const bool need_x = xn->requires_grad;
      const bool need_c = cn->requires_grad;
      const bool need_b = bn->requires_grad && use_base;
      const bool need_s = sn->requires_grad;
      double* gx = need_x ? xn->grad_buf().data() : nullptr;
      double* gc = need_c ? cn->grad_buf().data() : nullptr;
      double* gb = need_b ? bn->grad_buf().data() : nullptr;
      double* gs = need_s ? sn->grad_buf().data() : nullptr;
      for (int s = 0; s < n; ++s)
        for (int o = 0; o < out; ++o) {
          const double g = onp->grad[static_cast<std::size_t>(s) * out + o];
          if (g == 0.0) continue;
          for (int i = 0; i < in; ++i) {
            const std::size_t e = static_cast<std::size_t>(o) * in + i;
            const std::size_t boff = (static_cast<std::size_t>(s) * in + i) * nb;
            double spl = 0.0, dspl = 0.0;
            for (int b = 0; b < nb; ++b) {
              const double c = cf[e * nb + b];
              spl += c * basis[boff + b];
              dspl += c * dbasis[boff + b];
              if (need_c) gc[e * nb + b] += g * sc[e] * basis[boff + b];
            }
            if (need_s) gs[e] += g * spl;
            if (need_b) gb[e] += g * act[static_cast<std::size_t>(s) * in + i];
            if (need_x) {
              double dx = sc[e] * dspl;
              if (use_base) dx += bw[e] * dact[static_cast<std::size_t>(s) * in + i];
              gx[static_cast<std::size_t>(s) * in + i] += g * dx;
            }
          }
        }
    };
  }
  return outt;
}

}  // namespace sckan
