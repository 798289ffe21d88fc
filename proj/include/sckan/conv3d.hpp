#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <vector>

#include "sckan/ops.hpp"
#include "sckan/tensor.hpp"

namespace sckan {

namespace detail {

// Unrolls 3x3x3 neighborhoods of x [Cin,D,H,W] into a [Cin*27, D*H*W] matrix
// (zero padding of one voxel per side).
inline void im2col3(const std::vector<double>& x, int cin, int d, int h, int w,
                    std::vector<double>& k) {
  const std::size_t n = static_cast<std::size_t>(d) * h * w;
  k.assign(static_cast<std::size_t>(cin) * 27 * n, 0.0);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < cin; ++ci) {
    const double* xc = x.data() + static_cast<std::size_t>(ci) * n;
    for (int kd = -1; kd <= 1; ++kd)
      for (int kh = -1; kh <= 1; ++kh)
        for (int kw = -1; kw <= 1; ++kw) {
          const int kofs = (kd + 1) * 9 + (kh + 1) * 3 + (kw + 1);
          double* row = k.data() + (static_cast<std::size_t>(ci) * 27 + kofs) * n;
          for (int od = 0; od < d; ++od) {
            const int id = od + kd;
            if (id < 0 || id >= d) continue;
            for (int oh = 0; oh < h; ++oh) {
              const int ih = oh + kh;
              if (ih < 0 || ih >= h) continue;
              const int w0 = kw < 0 ? 1 : 0;
              const int w1 = kw > 0 ? w - 1 : w;
              const double* src = xc + static_cast<std::size_t>(id) * plane + static_cast<std::size_t>(ih) * w + kw;
              double* dst = row + static_cast<std::size_t>(od) * plane + static_cast<std::size_t>(oh) * w;
              for (int ow = w0; ow < w1; ++ow) dst[ow] = src[ow];
            }
          }
        }
  }
}

}  // namespace detail

// 3x3x3 convolution, stride 1, zero padding 1.
// x: [Cin,D,H,W], w: [Cout,Cin,3,3,3], b: [Cout] -> [Cout,D,H,W]
inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.shape().size() == 4, "conv3d: input must be [C,D,H,W]");
  require(w.shape().size() == 5 && w.shape()[2] == 3 && w.shape()[3] == 3 && w.shape()[4] == 3,
          "conv3d: kernel must be [Cout,Cin,3,3,3]");
  require(x.shape()[0] == w.shape()[1], "conv3d: channel mismatch");
  const int cin = x.shape()[0], d = x.shape()[1], h = x.shape()[2], ww = x.shape()[3];
  const int cout = w.shape()[0];
  require(b.shape() == Shape{cout}, "conv3d: bias shape mismatch");
  const std::size_t n = static_cast<std::size_t>(d) * h * ww;

  std::vector<double> k;
  detail::im2col3(x.node()->value, cin, d, h, ww, k);
  std::vector<double> v(static_cast<std::size_t>(cout) * n);
  {
    detail::CMapMat mw(w.values().data(), cout, cin * 27);
    detail::CMapMat mk(k.data(), cin * 27, static_cast<Eigen::Index>(n));
    detail::MapMat mv(v.data(), cout, static_cast<Eigen::Index>(n));
    mv.noalias() = mw * mk;
  }
  for (int co = 0; co < cout; ++co) {
    double* row = v.data() + static_cast<std::size_t>(co) * n;
    const double bias = b[co];
    for (std::size_t i = 0; i < n; ++i) row[i] += bias;
  }

  Tensor out = Tensor::make_op({cout, d, h, ww}, std::move(v), {x, w, b}, nullptr);
  if (out.requires_grad()) {
    auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
    out.node()->backward_fn = [xn, wn, bn, cin, cout, d, h, ww, n, onp = on.get()] {
      detail::CMapMat g(onp->grad.data(), cout, static_cast<Eigen::Index>(n));
      if (wn->requires_grad || xn->requires_grad) {
        // im2col is rebuilt here instead of cached to keep step memory flat.
        std::vector<double> k;
        detail::im2col3(xn->value, cin, d, h, ww, k);
        if (wn->requires_grad) {
          detail::CMapMat mk(k.data(), cin * 27, static_cast<Eigen::Index>(n));
          detail::MapMat gw(wn->grad_buf().data(), cout, cin * 27);
          gw.noalias() += g * mk.transpose();
        }
        if (xn->requires_grad) {
          std::vector<double> t(static_cast<std::size_t>(cin) * 27 * n);
          {
            detail::CMapMat mw(wn->value.data(), cout, cin * 27);
            detail::MapMat mt(t.data(), cin * 27, static_cast<Eigen::Index>(n));
            mt.noalias() = mw.transpose() * g;
          }
          // col2im scatter-add
          auto& gx = xn->grad_buf();
          const std::size_t plane = static_cast<std::size_t>(h) * ww;
          for (int ci = 0; ci < cin; ++ci) {
            double* gxc = gx.data() + static_cast<std::size_t>(ci) * n;
            for (int kd = -1; kd <= 1; ++kd)
              for (int kh = -1; kh <= 1; ++kh)
                for (int kw = -1; kw <= 1; ++kw) {
                  const int kofs = (kd + 1) * 9 + (kh + 1) * 3 + (kw + 1);
                  const double* row = t.data() + (static_cast<std::size_t>(ci) * 27 + kofs) * n;
                  for (int od = 0; od < d; ++od) {
                    const int id = od + kd;
                    if (id < 0 || id >= d) continue;
                    for (int oh = 0; oh < h; ++oh) {
                      const int ih = oh + kh;
                      if (ih < 0 || ih >= h) continue;
                      const int w0 = kw < 0 ? 1 : 0;
                      const int w1 = kw > 0 ? ww - 1 : ww;
                      double* dst = gxc + static_cast<std::size_t>(id) * plane + static_cast<std::size_t>(ih) * ww + kw;
                      const double* src = row + static_cast<std::size_t>(od) * plane + static_cast<std::size_t>(oh) * ww;
                      for (int ow = w0; ow < w1; ++ow) dst[ow] += src[ow];
                    }
                  }
                }
          }
        }
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buf();
        for (int co = 0; co < cout; ++co) {
          double s = 0.0;
          const double* row = onp->grad.data() + static_cast<std::size_t>(co) * n;
          for (std::size_t i = 0; i < n; ++i) s += row[i];
          gb[co] += s;
        }
      }
    };
  }
  return out;
}

// 1x1x1 convolution (per-voxel linear map across channels).
// x: [Cin,D,H,W], w: [Cout,Cin], b: [Cout] -> [Cout,D,H,W]
inline Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.shape().size() == 4 && w.shape().size() == 2 && x.shape()[0] == w.shape()[1],
          "conv1x1: shape mismatch");
  const int cin = x.shape()[0], d = x.shape()[1], h = x.shape()[2], ww = x.shape()[3];
  const int cout = w.shape()[0];
  require(b.shape() == Shape{cout}, "conv1x1: bias shape mismatch");
  const std::size_t n = static_cast<std::size_t>(d) * h * ww;
  std::vector<double> v(static_cast<std::size_t>(cout) * n);
  {
    detail::CMapMat mw(w.values().data(), cout, cin);
    detail::CMapMat mx(x.values().data(), cin, static_cast<Eigen::Index>(n));
    detail::MapMat mv(v.data(), cout, static_cast<Eigen::Index>(n));
    mv.noalias() = mw * mx;
  }
  for (int co = 0; co < cout; ++co) {
    double* row = v.data() + static_cast<std::size_t>(co) * n;
    for (std::size_t i = 0; i < n; ++i) row[i] += b[co];
  }
  Tensor out = Tensor::make_op({cout, d, h, ww}, std::move(v), {x, w, b}, nullptr);
  if (out.requires_grad()) {
    auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
    out.node()->backward_fn = [xn, wn, bn, cin, cout, n, onp = on.get()] {
      detail::CMapMat g(onp->grad.data(), cout, static_cast<Eigen::Index>(n));
      if (xn->requires_grad) {
        detail::CMapMat mw(wn->value.data(), cout, cin);
        detail::MapMat gx(xn->grad_buf().data(), cin, static_cast<Eigen::Index>(n));
        gx.noalias() += mw.transpose() * g;
      }
      if (wn->requires_grad) {
        detail::CMapMat mx(xn->value.data(), cin, static_cast<Eigen::Index>(n));
        detail::MapMat gw(wn->grad_buf().data(), cout, cin);
        gw.noalias() += g * mx.transpose();
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buf();
        for (int co = 0; co < cout; ++co) {
          double s = 0.0;
          const double* row = onp->grad.data() + static_cast<std::size_t>(co) * n;
          for (std::size_t i = 0; i < n; ++i) s += row[i];
          gb[co] += s;
        }
      }
    };
  }
  return out;
}

// Factor-2 trilinear downsampling: the mean of each 2x2x2 block.
inline Tensor downsample2x(const Tensor& x) {
  require(x.shape().size() == 4, "downsample2x: input must be [C,D,H,W]");
  const int c = x.shape()[0], d = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  require(d % 2 == 0 && h % 2 == 0 && w % 2 == 0, "downsample2x: odd spatial dims");
  const int od = d / 2, oh = h / 2, ow = w / 2;
  const std::size_t n_in = static_cast<std::size_t>(d) * h * w;
  const std::size_t n_out = static_cast<std::size_t>(od) * oh * ow;
  std::vector<double> v(static_cast<std::size_t>(c) * n_out);
  for (int ci = 0; ci < c; ++ci) {
    const double* xc = x.values().data() + static_cast<std::size_t>(ci) * n_in;
    double* vc = v.data() + static_cast<std::size_t>(ci) * n_out;
    for (int i = 0; i < od; ++i)
      for (int j = 0; j < oh; ++j)
        for (int k = 0; k < ow; ++k) {
          double s = 0.0;
          for (int a = 0; a < 2; ++a)
            for (int bq = 0; bq < 2; ++bq)
              for (int cq = 0; cq < 2; ++cq)
                s += xc[(static_cast<std::size_t>(2 * i + a) * h + (2 * j + bq)) * w + (2 * k + cq)];
          vc[(static_cast<std::size_t>(i) * oh + j) * ow + k] = s * 0.125;
        }
  }
  Tensor out = Tensor::make_op({c, od, oh, ow}, std::move(v), {x}, nullptr);
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    out.node()->backward_fn = [xn, c, d, h, w, od, oh, ow, n_in, n_out, onp = on.get()] {
      auto& gx = xn->grad_buf();
      for (int ci = 0; ci < c; ++ci) {
        double* gxc = gx.data() + static_cast<std::size_t>(ci) * n_in;
        const double* gv = onp->grad.data() + static_cast<std::size_t>(ci) * n_out;
        for (int i = 0; i < od; ++i)
          for (int j = 0; j < oh; ++j)
            for (int k = 0; k < ow; ++k) {
              const double g = gv[(static_cast<std::size_t>(i) * oh + j) * ow + k] * 0.125;
              for (int a = 0; a < 2; ++a)
                for (int bq = 0; bq < 2; ++bq)
                  for (int cq = 0; cq < 2; ++cq)
                    gxc[(static_cast<std::size_t>(2 * i + a) * h + (2 * j + bq)) * w + (2 * k + cq)] += g;
            }
      }
    };
  }
  return out;
}

namespace detail {

// 1-D taps for factor-2 trilinear upsampling (half-voxel center convention,
// edges clamped): out[2i] = 0.25*x[i-1] + 0.75*x[i], out[2i+1] = 0.75*x[i] + 0.25*x[i+1].
struct UpTap {
  int i0, i1;
  double w0, w1;
};

inline std::vector<UpTap> up_taps(int in_size) {
  std::vector<UpTap> taps(static_cast<std::size_t>(2 * in_size));
  for (int o = 0; o < 2 * in_size; ++o) {
    const double pos = (o + 0.5) * 0.5 - 0.5;
    int lo = static_cast<int>(std::floor(pos));
    const double frac = pos - lo;
    int hi = lo + 1;
    lo = std::clamp(lo, 0, in_size - 1);
    hi = std::clamp(hi, 0, in_size - 1);
    taps[o] = {lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace detail

// Factor-2 trilinear upsampling of [C,d,h,w] -> [C,2d,2h,2w].
inline Tensor upsample2x(const Tensor& x) {
  require(x.shape().size() == 4, "upsample2x: input must be [C,D,H,W]");
  const int c = x.shape()[0], d = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int od = 2 * d, oh = 2 * h, ow = 2 * w;
  const auto td = detail::up_taps(d), th = detail::up_taps(h), tw = detail::up_taps(w);
  const std::size_t n_in = static_cast<std::size_t>(d) * h * w;
  const std::size_t n_out = static_cast<std::size_t>(od) * oh * ow;
  std::vector<double> v(static_cast<std::size_t>(c) * n_out);
  for (int ci = 0; ci < c; ++ci) {
    const double* xc = x.values().data() + static_cast<std::size_t>(ci) * n_in;
    double* vc = v.data() + static_cast<std::size_t>(ci) * n_out;
    for (int i = 0; i < od; ++i)
      for (int j = 0; j < oh; ++j)
        for (int k = 0; k < ow; ++k) {
          const auto &a = td[i], &b = th[j], &cq = tw[k];
          double s = 0.0;
          s += a.w0 * (b.w0 * (cq.w0 * xc[(static_cast<std::size_t>(a.i0) * h + b.i0) * w + cq.i0] +
                               cq.w1 * xc[(static_cast<std::size_t>(a.i0) * h + b.i0) * w + cq.i1]) +
                       b.w1 * (cq.w0 * xc[(static_cast<std::size_t>(a.i0) * h + b.i1) * w + cq.i0] +
                               cq.w1 * xc[(static_cast<std::size_t>(a.i0) * h + b.i1) * w + cq.i1]));
          s += a.w1 * (b.w0 * (cq.w0 * xc[(static_cast<std::size_t>(a.i1) * h + b.i0) * w + cq.i0] +
                               cq.w1 * xc[(static_cast<std::size_t>(a.i1) * h + b.i0) * w + cq.i1]) +
                       b.w1 * (cq.w0 * xc[(static_cast<std::size_t>(a.i1) * h + b.i1) * w + cq.i0] +
                               cq.w1 * xc[(static_cast<std::size_t>(a.i1) * h + b.i1) * w + cq.i1]));
          vc[(static_cast<std::size_t>(i) * oh + j) * ow + k] = s;
        }
  }
  Tensor out = Tensor::make_op({c, od, oh, ow}, std::move(v), {x}, nullptr);
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    out.node()->backward_fn = [xn, c, d, h, w, od, oh, ow, td, th, tw, n_in, n_out, onp = on.get()] {
      auto& gx = xn->grad_buf();
      for (int ci = 0; ci < c; ++ci) {
        double* gxc = gx.data() + static_cast<std::size_t>(ci) * n_in;
        const double* gv = onp->grad.data() + static_cast<std::size_t>(ci) * n_out;
        for (int i = 0; i < od; ++i)
          for (int j = 0; j < oh; ++j)
            for (int k = 0; k < ow; ++k) {
              const auto &a = td[i], &b = th[j], &cq = tw[k];
              const double g = gv[(static_cast<std::size_t>(i) * oh + j) * ow + k];
              gxc[(static_cast<std::size_t>(a.i0) * h + b.i0) * w + cq.i0] += g * a.w0 * b.w0 * cq.w0;
              gxc[(static_cast<std::size_t>(a.i0) * h + b.i0) * w + cq.i1] += g * a.w0 * b.w0 * cq.w1;
              gxc[(static_cast<std::size_t>(a.i0) * h + b.i1) * w + cq.i0] += g * a.w0 * b.w1 * cq.w0;
              gxc[(static_cast<std::size_t>(a.i0) * h + b.i1) * w + cq.i1] += g * a.w0 * b.w1 * cq.w1;
              gxc[(static_cast<std::size_t>(a.i1) * h + b.i0) * w + cq.i0] += g * a.w1 * b.w0 * cq.w0;
              gxc[(static_cast<std::size_t>(a.i1) * h + b.i0) * w + cq.i1] += g * a.w1 * b.w0 * cq.w1;
              gxc[(static_cast<std::size_t>(a.i1) * h + b.i1) * w + cq.i0] += g * a.w1 * b.w1 * cq.w0;
              gxc[(static_cast<std::size_t>(a.i1) * h + b.i1) * w + cq.i1] += g * a.w1 * b.w1 * cq.w1;
            }
      }
    };
  }
  return out;
}

}  // namespace sckan
