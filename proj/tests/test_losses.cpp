#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sckan/losses.hpp"
#include "sckan/verify.hpp"

using namespace sckan;

TEST_CASE("hybrid loss vanishes for a one-hot perfect prediction") {
  Mask target(2, 2, 2);
  target.at(0, 0, 0) = 1;
  target.at(1, 1, 1) = 1;
  const int n = 8;
  std::vector<double> probs(2 * n, 0.0);
  for (int v = 0; v < n; ++v) {
    const int cls = target.data[static_cast<std::size_t>(v)];
    probs[static_cast<std::size_t>(cls * n + v)] = 1.0;
  }
  Tensor loss = hybrid_loss(Tensor::from_vector({2, 2, 2, 2}, probs), target);
  CHECK(loss.item() < 1e-4);
}

TEST_CASE("uniform probabilities match a voxel-loop oracle") {
  Rng rng(1);
  Mask target(3, 3, 3);
  int fg = 0;
  for (auto& t : target.data) {
    t = rng.uniform() < 0.4 ? 1 : 0;
    fg += t;
  }
  REQUIRE(fg > 0);
  const int n = 27;
  std::vector<double> probs(2 * n, 0.5);
  Tensor loss = hybrid_loss(Tensor::from_vector({2, 3, 3, 3}, probs), target);

  // independent voxel loop
  double ce = 0.0;
  for (int v = 0; v < n; ++v) ce += -std::log(0.5);
  ce /= n;
  CHECK(ce == Catch::Approx(std::log(2.0)).margin(1e-15));
  double inter = 0.0, psum = 0.0, ysum = 0.0;
  for (int v = 0; v < n; ++v) {
    const double p = 0.5;
    const double y = target.data[static_cast<std::size_t>(v)] == 1 ? 1.0 : 0.0;
    inter += p * y;
    psum += p;
    ysum += y;
  }
  const double dice = 1.0 - (2.0 * inter + 1e-5) / (psum + ysum + 1e-5);
  const double expected = 0.5 * (dice + ce);
  CHECK(loss.item() == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("empty foreground with all-background prediction stays near zero") {
  Mask target(2, 2, 2);  // all zeros
  const int n = 8;
  std::vector<double> probs(2 * n, 0.0);
  for (int v = 0; v < n; ++v) probs[static_cast<std::size_t>(v)] = 1.0;  // class 0 certain
  Tensor loss = hybrid_loss(Tensor::from_vector({2, 2, 2, 2}, probs), target);
  CHECK(loss.item() < 1e-3);
}

TEST_CASE("hybrid loss rejects mismatched shapes and bad labels") {
  Mask target(2, 2, 2);
  CHECK_THROWS_AS(hybrid_loss(Tensor::zeros({2, 2, 2, 4}), target), ContractViolation);
  Mask bad(2, 2, 2);
  bad.at(0, 0, 0) = 7;
  CHECK_THROWS_AS(hybrid_loss(Tensor::zeros({2, 2, 2, 2}), bad), ContractViolation);
}

TEST_CASE("warmup reproduces the Gaussian ramp exactly") {
  CHECK(std::abs(warmup(1000, 1000) - 1.0) <= 1e-12);
  CHECK(std::abs(warmup(0, 1000) - std::exp(-5.0)) <= 1e-12);
  CHECK(std::abs(warmup(500, 1000) - std::exp(-1.25)) <= 1e-12);
  CHECK(warmup(0, 7) == Catch::Approx(0.006738).margin(1e-6));
  CHECK_THROWS_AS(warmup(-1, 10), ContractViolation);
  CHECK_THROWS_AS(warmup(11, 10), ContractViolation);

  // monotone nondecreasing over the whole schedule
  double prev = -1.0;
  for (int s = 0; s <= 512; ++s) {
    const double v = warmup(s, 512);
    REQUIRE(v >= prev);
    prev = v;
  }
}

TEST_CASE("total loss assembly") {
  auto t0 = total_loss(std::nullopt, std::nullopt, std::nullopt, std::nullopt, std::nullopt, 0.7);
  CHECK(t0.item() == 0.0);

  auto t1 = total_loss(Tensor::scalar(1.0), std::nullopt, std::nullopt, std::nullopt,
                       std::nullopt, 0.123);
  CHECK(t1.item() == Catch::Approx(1.0).margin(1e-15));

  auto t2 = total_loss(Tensor::scalar(0.5), Tensor::scalar(0.4), Tensor::scalar(0.3),
                       Tensor::scalar(0.2), Tensor::scalar(0.1), 0.5);
  CHECK(t2.item() == Catch::Approx(1.35).margin(1e-12));
}

TEST_CASE("hybrid loss passes grad_check") {
  auto r = gradcheck_hybrid(5);
  INFO(r.detail);
  CHECK(r.ok);
}
