#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <vector>

#include "sckan/tensor.hpp"

namespace sckan {

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
}  // namespace detail

// [M,K] x [K,N] -> [M,N]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
          "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> v(static_cast<std::size_t>(m) * n);
  {
    detail::CMapMat ma(a.values().data(), m, k), mb(b.values().data(), k, n);
    detail::MapMat mv(v.data(), m, n);
    mv.noalias() = ma * mb;
  }
  Tensor out = Tensor::make_op({m, n}, std::move(v), {a, b}, nullptr);
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    out.node()->backward_fn = [an, bn, m, k, n, onp = on.get()] {
      detail::CMapMat g(onp->grad.data(), m, n);
      if (an->requires_grad) {
        detail::CMapMat mb(bn->value.data(), k, n);
        detail::MapMat ga(an->grad_buf().data(), m, k);
        ga.noalias() += g * mb.transpose();
      }
      if (bn->requires_grad) {
        detail::CMapMat ma(an->value.data(), m, k);
        detail::MapMat gb(bn->grad_buf().data(), k, n);
        gb.noalias() += ma.transpose() * g;
      }
    };
  }
  return out;
}

// y = x W^T + b with x [N,in], W [out,in], b [out] -> [N,out]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.shape().size() == 2 && w.shape().size() == 2 && x.shape()[1] == w.shape()[1],
          "linear: incompatible shapes");
  require(b.shape() == Shape{w.shape()[0]}, "linear: bias shape mismatch");
  const int n = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
  std::vector<double> v(static_cast<std::size_t>(n) * out_dim);
  {
    detail::CMapMat mx(x.values().data(), n, in), mw(w.values().data(), out_dim, in);
    detail::MapMat mv(v.data(), n, out_dim);
    mv.noalias() = mx * mw.transpose();
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out_dim; ++o) v[static_cast<std::size_t>(i) * out_dim + o] += b[o];
  }
  Tensor out = Tensor::make_op({n, out_dim}, std::move(v), {x, w, b}, nullptr);
  if (out.requires_grad()) {
    auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
    out.node()->backward_fn = [xn, wn, bn, n, in, out_dim, onp = on.get()] {
      detail::CMapMat g(onp->grad.data(), n, out_dim);
      if (xn->requires_grad) {
        detail::CMapMat mw(wn->value.data(), out_dim, in);
        detail::MapMat gx(xn->grad_buf().data(), n, in);
        gx.noalias() += g * mw;
      }
      if (wn->requires_grad) {
        detail::CMapMat mx(xn->value.data(), n, in);
        detail::MapMat gw(wn->grad_buf().data(), out_dim, in);
        gw.noalias() += g.transpose() * mx;
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buf();
        for (int i = 0; i < n; ++i)
          for (int o = 0; o < out_dim; ++o) gb[o] += onp->grad[static_cast<std::size_t>(i) * out_dim + o];
      }
    };
  }
  return out;
}

// Softmax over rows (classes) of a [C,N] matrix, per column.
inline Tensor softmax_cols(const Tensor& x) {
  require(x.shape().size() == 2, "softmax_cols: expected 2-D tensor");
  const int c = x.shape()[0], n = x.shape()[1];
  std::vector<double> v(x.size());
  for (int j = 0; j < n; ++j) {
    double mx = x[j];
    for (int i = 1; i < c; ++i) mx = std::max(mx, x[static_cast<std::size_t>(i) * n + j]);
    double s = 0.0;
    for (int i = 0; i < c; ++i) {
      const double e = std::exp(x[static_cast<std::size_t>(i) * n + j] - mx);
      v[static_cast<std::size_t>(i) * n + j] = e;
      s += e;
    }
    for (int i = 0; i < c; ++i) v[static_cast<std::size_t>(i) * n + j] /= s;
  }
  Tensor out = Tensor::make_op(x.shape(), std::move(v), {x}, nullptr);
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    out.node()->backward_fn = [xn, c, n, onp = on.get()] {
      auto& gx = xn->grad_buf();
      for (int j = 0; j < n; ++j) {
        double dsum = 0.0;
        for (int i = 0; i < c; ++i) {
          const std::size_t k = static_cast<std::size_t>(i) * n + j;
          dsum += onp->grad[k] * onp->value[k];
        }
        for (int i = 0; i < c; ++i) {
          const std::size_t k = static_cast<std::size_t>(i) * n + j;
          gx[k] += onp->value[k] * (onp->grad[k] - dsum);
        }
      }
    };
  }
  return out;
}

// out[v] = probs[labels[v], v] for probs [C,N]; differentiable gather.
inline Tensor select_class(const Tensor& probs, const std::vector<int>& labels) {
  require(probs.shape().size() == 2, "select_class: expected 2-D tensor");
  const int c = probs.shape()[0], n = probs.shape()[1];
  require(static_cast<int>(labels.size()) == n, "select_class: label count mismatch");
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    require(labels[j] >= 0 && labels[j] < c, "select_class: label out of range");
    v[j] = probs[static_cast<std::size_t>(labels[j]) * n + j];
  }
  Tensor out = Tensor::make_op({n}, std::move(v), {probs}, nullptr);
  if (out.requires_grad()) {
    auto pn = probs.node(), on = out.node();
    out.node()->backward_fn = [pn, labels, n, onp = on.get()] {
      auto& gp = pn->grad_buf();
      for (int j = 0; j < n; ++j)
        gp[static_cast<std::size_t>(labels[j]) * n + j] += onp->grad[j];
    };
  }
  return out;
}

// Per-column L2 normalization of a [D,N] matrix with max(norm, eps) guard.
inline Tensor normalize_cols(const Tensor& x, double eps_norm = 1e-8) {
  require(x.shape().size() == 2, "normalize_cols: expected 2-D tensor");
  const int d = x.shape()[0], n = x.shape()[1];
  std::vector<double> v(x.size());
  std::vector<double> norms(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
      const double xv = x[static_cast<std::size_t>(i) * n + j];
      s += xv * xv;
    }
    norms[j] = std::max(std::sqrt(s), eps_norm);
    for (int i = 0; i < d; ++i)
      v[static_cast<std::size_t>(i) * n + j] = x[static_cast<std::size_t>(i) * n + j] / norms[j];
  }
  Tensor out = Tensor::make_op(x.shape(), std::move(v), {x}, nullptr);
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    out.node()->backward_fn = [xn, d, n, eps_norm, norms, onp = on.get()] {
      auto& gx = xn->grad_buf();
      for (int j = 0; j < n; ++j) {
        const double m = norms[j];
        double raw = 0.0;
        for (int i = 0; i < d; ++i) {
          const double xv = xn->value[static_cast<std::size_t>(i) * n + j];
          raw += xv * xv;
        }
        const bool clamped = std::sqrt(raw) <= eps_norm;
        if (clamped) {
          for (int i = 0; i < d; ++i)
            gx[static_cast<std::size_t>(i) * n + j] += onp->grad[static_cast<std::size_t>(i) * n + j] / m;
        } else {
          double gy_dot_y = 0.0;
          for (int i = 0; i < d; ++i) {
            const std::size_t k = static_cast<std::size_t>(i) * n + j;
            gy_dot_y += onp->grad[k] * onp->value[k];
          }
          for (int i = 0; i < d; ++i) {
            const std::size_t k = static_cast<std::size_t>(i) * n + j;
            gx[k] += (onp->grad[k] - onp->value[k] * gy_dot_y) / m;
          }
        }
      }
    };
  }
  return out;
}

// Max over consecutive groups of `group` rows: [G*group, N] -> [G, N].
// Gradient routes to the first maximal row of each group.
inline Tensor group_max_rows(const Tensor& x, int group) {
  require(x.shape().size() == 2 && group >= 1 && x.shape()[0] % group == 0,
          "group_max_rows: rows not divisible by group");
  const int rows = x.shape()[0], n = x.shape()[1], g = rows / group;
  std::vector<double> v(static_cast<std::size_t>(g) * n);
  std::vector<int> arg(static_cast<std::size_t>(g) * n);
  for (int gi = 0; gi < g; ++gi) {
    for (int j = 0; j < n; ++j) {
      int best = gi * group;
      double bv = x[static_cast<std::size_t>(best) * n + j];
      for (int r = gi * group + 1; r < (gi + 1) * group; ++r) {
        const double xv = x[static_cast<std::size_t>(r) * n + j];
        if (xv > bv) {
          bv = xv;
          best = r;
        }
      }
      v[static_cast<std::size_t>(gi) * n + j] = bv;
      arg[static_cast<std::size_t>(gi) * n + j] = best;
    }
  }
  Tensor out = Tensor::make_op({g, n}, std::move(v), {x}, nullptr);
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    out.node()->backward_fn = [xn, arg, n, g, onp = on.get()] {
      auto& gx = xn->grad_buf();
      for (int gi = 0; gi < g; ++gi)
        for (int j = 0; j < n; ++j) {
          const std::size_t k = static_cast<std::size_t>(gi) * n + j;
          gx[static_cast<std::size_t>(arg[k]) * n + j] += onp->grad[k];
        }
    };
  }
  return out;
}

// Mean of selected columns of a [D,N] matrix -> [D]. The column set is a
// constant (no gradient through the selection itself).
inline Tensor masked_mean_cols(const Tensor& x, const std::vector<int>& cols) {
  require(x.shape().size() == 2, "masked_mean_cols: expected 2-D tensor");
  require(!cols.empty(), "masked_mean_cols: empty column set");
  const int d = x.shape()[0], n = x.shape()[1];
  std::vector<double> v(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < d; ++i) {
    double s = 0.0;
    for (int j : cols) s += x[static_cast<std::size_t>(i) * n + j];
    v[i] = s / static_cast<double>(cols.size());
  }
  Tensor out = Tensor::make_op({d}, std::move(v), {x}, nullptr);
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    out.node()->backward_fn = [xn, cols, d, n, onp = on.get()] {
      auto& gx = xn->grad_buf();
      const double inv = 1.0 / static_cast<double>(cols.size());
      for (int i = 0; i < d; ++i) {
        const double g = onp->grad[i] * inv;
        for (int j : cols) gx[static_cast<std::size_t>(i) * n + j] += g;
      }
    };
  }
  return out;
}

}  // namespace sckan
