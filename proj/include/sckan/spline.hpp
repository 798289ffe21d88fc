#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "sckan/tensor.hpp"

namespace sckan {

// Uniform B-spline grid over [lo, hi] with G interior intervals, degree p,
// and p uniformly extended knots beyond each end. Number of basis functions
// is G + p.
struct SplineGrid {
  int degree = 3;
  double lo = -1.0;
  double hi = 1.0;
  int num_intervals = 5;
  std::vector<double> knots;  // length G + 2p + 1

  int num_basis() const { return num_intervals + degree; }

  static SplineGrid make(int num_intervals, int degree, double lo = -1.0, double hi = 1.0) {
    require(num_intervals >= 1 && degree >= 1, "SplineGrid: G >= 1 and p >= 1 required");
    require(hi > lo, "SplineGrid: empty range");
    SplineGrid g;
    g.degree = degree;
    g.lo = lo;
    g.hi = hi;
    g.num_intervals = num_intervals;
    const double h = (hi - lo) / num_intervals;
    g.knots.resize(static_cast<std::size_t>(num_intervals + 2 * degree + 1));
    for (int i = 0; i < static_cast<int>(g.knots.size()); ++i)
      g.knots[static_cast<std::size_t>(i)] = lo + (i - degree) * h;
    return g;
  }
};

namespace detail {
constexpr int kMaxKnots = 64;
}

// All G+p basis values at x via the Cox-de Boor recurrence. Inputs outside
// [lo, hi] are clamped to the range boundary first, which makes the
// evaluation total. Each value lies in [0,1] and the vector sums to 1.
inline void bspline_basis(double x, const SplineGrid& grid, double* out) {
  const int p = grid.degree, nb = grid.num_basis();
  const int nk = static_cast<int>(grid.knots.size());
  require(nk <= detail::kMaxKnots, "bspline_basis: grid too large");
  x = std::clamp(x, grid.lo, grid.hi);

  std::array<double, detail::kMaxKnots> cur{}, prev{};
  // degree 0: indicator of the knot span. x == hi is assigned to the last
  // interior span (closed right end) so partition of unity holds there too.
  if (x == grid.hi) {
    prev[static_cast<std::size_t>(p + grid.num_intervals - 1)] = 1.0;
  } else {
    for (int t = 0; t < nk - 1; ++t)
      prev[static_cast<std::size_t>(t)] = (x >= grid.knots[static_cast<std::size_t>(t)] &&
                                           x < grid.knots[static_cast<std::size_t>(t + 1)])
                                              ? 1.0
                                              : 0.0;
  }
  for (int k = 1; k <= p; ++k) {
    for (int t = 0; t < nk - k - 1; ++t) {
      const double d0 = grid.knots[static_cast<std::size_t>(t + k)] - grid.knots[static_cast<std::size_t>(t)];
      const double d1 = grid.knots[static_cast<std::size_t>(t + k + 1)] - grid.knots[static_cast<std::size_t>(t + 1)];
      double v = 0.0;
      if (prev[static_cast<std::size_t>(t)] != 0.0)
        v += (x - grid.knots[static_cast<std::size_t>(t)]) / d0 * prev[static_cast<std::size_t>(t)];
      if (prev[static_cast<std::size_t>(t + 1)] != 0.0)
        v += (grid.knots[static_cast<std::size_t>(t + k + 1)] - x) / d1 * prev[static_cast<std::size_t>(t + 1)];
      cur[static_cast<std::size_t>(t)] = v;
    }
    std::swap(cur, prev);
  }
  for (int t = 0; t < nb; ++t) out[t] = prev[static_cast<std::size_t>(t)];
}

inline std::vector<double> bspline_basis(double x, const SplineGrid& grid) {
  std::vector<double> out(static_cast<std::size_t>(grid.num_basis()));
  bspline_basis(x, grid, out.data());
  return out;
}

// Basis values and their derivatives at x. The derivative is zero where the
// input was clamped (outside the grid range the evaluation is constant).
inline void bspline_basis_and_deriv(double x, const SplineGrid& grid, double* out,
                                    double* dout) {
  const int p = grid.degree, nb = grid.num_basis();
  const bool clamped = x < grid.lo || x > grid.hi;
  bspline_basis(x, grid, out);
  if (p == 1) {
    // Derivative of degree-1 hats from degree-0 indicators.
    const double xc = std::clamp(x, grid.lo, grid.hi);
    for (int t = 0; t < nb; ++t) {
      const double d0 = grid.knots[static_cast<std::size_t>(t + 1)] - grid.knots[static_cast<std::size_t>(t)];
      const double d1 = grid.knots[static_cast<std::size_t>(t + 2)] - grid.knots[static_cast<std::size_t>(t + 1)];
      const bool in0 = xc >= grid.knots[static_cast<std::size_t>(t)] && xc < grid.knots[static_cast<std::size_t>(t + 1)];
      const bool in1 = xc >= grid.knots[static_cast<std::size_t>(t + 1)] && xc < grid.knots[static_cast<std::size_t>(t + 2)];
      dout[t] = clamped ? 0.0 : (in0 ? 1.0 / d0 : 0.0) - (in1 ? 1.0 / d1 : 0.0);
    }
    return;
  }
  // p >= 2: N'_{t,p} = p * (N_{t,p-1}/(k[t+p]-k[t]) - N_{t+1,p-1}/(k[t+p+1]-k[t+1])).
  // The degree-(p-1) functions live on the same knot vector, giving G+p+1 of them.
  SplineGrid lower = grid;
  lower.degree = p - 1;
  lower.num_intervals = grid.num_intervals + 2;
  std::array<double, detail::kMaxKnots> low{};
  bspline_basis(std::clamp(x, grid.lo, grid.hi), lower, low.data());
  for (int t = 0; t < nb; ++t) {
    const double d0 = grid.knots[static_cast<std::size_t>(t + p)] - grid.knots[static_cast<std::size_t>(t)];
    const double d1 = grid.knots[static_cast<std::size_t>(t + p + 1)] - grid.knots[static_cast<std::size_t>(t + 1)];
    dout[t] = clamped ? 0.0 : p * (low[static_cast<std::size_t>(t)] / d0 - low[static_cast<std::size_t>(t + 1)] / d1);
  }
}

}  // namespace sckan
