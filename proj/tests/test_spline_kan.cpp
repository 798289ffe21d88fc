#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sckan/gradcheck.hpp"
#include "sckan/kan.hpp"
#include "sckan/spline.hpp"
#include "sckan/verify.hpp"

using namespace sckan;

namespace {

// Independent reference: the Cox-de Boor recursion written directly from the
// defining recurrence, memoization-free.
double naive_cox_de_boor(int t, int k, double x, const std::vector<double>& knots) {
  if (k == 0) return (x >= knots[static_cast<std::size_t>(t)] && x < knots[static_cast<std::size_t>(t + 1)]) ? 1.0 : 0.0;
  const double left = (x - knots[static_cast<std::size_t>(t)]) /
                      (knots[static_cast<std::size_t>(t + k)] - knots[static_cast<std::size_t>(t)]);
  const double right = (knots[static_cast<std::size_t>(t + k + 1)] - x) /
                       (knots[static_cast<std::size_t>(t + k + 1)] - knots[static_cast<std::size_t>(t + 1)]);
  return left * naive_cox_de_boor(t, k - 1, x, knots) +
         right * naive_cox_de_boor(t + 1, k - 1, x, knots);
}

}  // namespace

TEST_CASE("grid construction invariants") {
  auto g = SplineGrid::make(5, 3);
  CHECK(g.knots.size() == 5 + 2 * 3 + 1);
  CHECK(g.num_basis() == 8);
  for (std::size_t i = 1; i < g.knots.size(); ++i) CHECK(g.knots[i] > g.knots[i - 1]);
  CHECK(g.knots[3] == Catch::Approx(-1.0));
  CHECK(g.knots[8] == Catch::Approx(1.0));
}

TEST_CASE("partition of unity across all tested grids") {
  Rng rng(5);
  for (int p : {1, 2, 3})
    for (int G : {3, 5, 8}) {
      auto grid = SplineGrid::make(G, p);
      double worst = 0.0;
      for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(-1.0, 1.0);
        auto b = bspline_basis(x, grid);
        double s = 0.0;
        for (double v : b) {
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
          s += v;
        }
        worst = std::max(worst, std::abs(s - 1.0));
      }
      for (double x : {-1.0, 1.0}) {
        auto b = bspline_basis(x, grid);
        double s = 0.0;
        for (double v : b) s += v;
        worst = std::max(worst, std::abs(s - 1.0));
      }
      INFO("p=" << p << " G=" << G);
      CHECK(worst <= 1e-12);
    }
}

TEST_CASE("degree-1 basis at a knot: two hats share all mass") {
  auto grid = SplineGrid::make(2, 1, 0.0, 1.0);
  auto b = bspline_basis(0.5, grid);
  REQUIRE(b.size() == 3);
  double s = 0.0;
  int nonzero = 0;
  for (double v : b) {
    s += v;
    nonzero += v > 0.0;
  }
  CHECK(s == Catch::Approx(1.0).margin(1e-15));
  CHECK(nonzero <= 2);
  CHECK(b[1] == Catch::Approx(1.0));  // hat centered at the knot 0.5
}

TEST_CASE("independent Cox-de Boor recursion agrees componentwise") {
  auto grid = SplineGrid::make(5, 3);
  Rng rng(9);
  for (int i = 0; i < 500; ++i) {
    const double x = rng.uniform(-1.0, 0.9999);
    auto mine = bspline_basis(x, grid);
    for (int t = 0; t < grid.num_basis(); ++t) {
      const double ref = naive_cox_de_boor(t, 3, x, grid.knots);
      REQUIRE(std::abs(mine[static_cast<std::size_t>(t)] - ref) <= 1e-12);
    }
  }
  // spec example: p=3, G=5, range [-1,1], x=0.3
  auto at = bspline_basis(0.3, grid);
  for (int t = 0; t < grid.num_basis(); ++t)
    CHECK(std::abs(at[static_cast<std::size_t>(t)] - naive_cox_de_boor(t, 3, 0.3, grid.knots)) <= 1e-12);
}

TEST_CASE("local support: basis vanishes outside its p+1 spans") {
  for (int p : {1, 2, 3})
    for (int G : {3, 5, 8}) {
      auto grid = SplineGrid::make(G, p);
      Rng rng(31);
      for (int i = 0; i < 300; ++i) {
        const double x = rng.uniform(-1.0, 1.0);
        auto b = bspline_basis(x, grid);
        for (int t = 0; t < grid.num_basis(); ++t) {
          const bool inside = x >= grid.knots[static_cast<std::size_t>(t)] &&
                              x <= grid.knots[static_cast<std::size_t>(t + p + 1)];
          if (!inside) REQUIRE(b[static_cast<std::size_t>(t)] == 0.0);
        }
      }
    }
}

TEST_CASE("inputs outside the range are clamped, evaluation total") {
  auto grid = SplineGrid::make(5, 3);
  auto at_hi = bspline_basis(1.0, grid);
  auto beyond = bspline_basis(25.0, grid);
  auto at_lo = bspline_basis(-1.0, grid);
  auto below = bspline_basis(-7.5, grid);
  for (int t = 0; t < grid.num_basis(); ++t) {
    CHECK(at_hi[static_cast<std::size_t>(t)] == beyond[static_cast<std::size_t>(t)]);
    CHECK(at_lo[static_cast<std::size_t>(t)] == below[static_cast<std::size_t>(t)]);
  }
}

TEST_CASE("kan layer: zero parameters give zero output") {
  Rng rng(2);
  auto kp = kan_init(4, 3, 5, 3, rng);
  std::fill(kp.spline_coeffs.mutable_values().begin(), kp.spline_coeffs.mutable_values().end(), 0.0);
  std::fill(kp.base_weight.mutable_values().begin(), kp.base_weight.mutable_values().end(), 0.0);
  Tensor x = Tensor::param_normal({5, 4}, rng, 1.0);
  Tensor y = kan_forward(x, kp);
  for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y[static_cast<std::size_t>(i)] == 0.0);
}

TEST_CASE("degree-1 spline with Greville coefficients reproduces identity") {
  Rng rng(6);
  auto kp = kan_init(1, 1, 4, 1, rng, /*use_base=*/false);
  auto& c = kp.spline_coeffs.mutable_values();
  for (int b = 0; b < kp.grid.num_basis(); ++b)
    c[static_cast<std::size_t>(b)] = kp.grid.knots[static_cast<std::size_t>(b + 1)];
  kp.spline_scale.mutable_values()[0] = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double xv = rng.uniform(-1.0, 1.0);
    Tensor y = kan_forward(Tensor::from_vector({1, 1}, {xv}), kp);
    REQUIRE(std::abs(y[0] - xv) <= 1e-10);
  }
}

TEST_CASE("kan init: determinism and shapes") {
  Rng r1(77), r2(77);
  auto a = kan_init(16, 16, 5, 3, r1);
  auto b = kan_init(16, 16, 5, 3, r2);
  CHECK(a.spline_coeffs.shape() == Shape{16, 16, 8});
  for (std::int64_t i = 0; i < a.spline_coeffs.size(); ++i)
    REQUIRE(a.spline_coeffs[static_cast<std::size_t>(i)] == b.spline_coeffs[static_cast<std::size_t>(i)]);
  for (std::int64_t i = 0; i < a.base_weight.size(); ++i)
    REQUIRE(a.base_weight[static_cast<std::size_t>(i)] == b.base_weight[static_cast<std::size_t>(i)]);
}

TEST_CASE("kan init: output magnitude on unit-normal inputs is sane over 100 seeds") {
  double acc = 0.0;
  int count = 0;
  for (int seed = 1; seed <= 100; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    auto kp = kan_init(8, 8, 5, 3, rng);
    Tensor x = Tensor::param_normal({16, 8}, rng, 1.0);
    Tensor y = kan_forward(x, kp);
    for (std::int64_t i = 0; i < y.size(); ++i) {
      acc += std::abs(y[static_cast<std::size_t>(i)]);
      ++count;
    }
  }
  const double mean_mag = acc / count;
  CHECK(mean_mag > 0.01);
  CHECK(mean_mag < 10.0);
}

TEST_CASE("kan layer passes grad_check (base branch on and off)") {
  auto r = gradcheck_kan_layer(20);
  INFO(r.detail);
  CHECK(r.ok);
  CHECK(r.worst < 1e-4);
}

TEST_CASE("kan forward rejects shape mismatches") {
  Rng rng(3);
  auto kp = kan_init(4, 3, 5, 3, rng);
  CHECK_THROWS_AS(kan_forward(Tensor::zeros({2, 5}), kp), ContractViolation);
}
