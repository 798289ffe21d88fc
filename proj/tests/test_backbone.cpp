#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sckan/backbone.hpp"
#include "sckan/verify.hpp"

using namespace sckan;

TEST_CASE("zero classifier head gives uniform class probabilities") {
  Rng rng(1);
  SegNetParams p = SegNetParams::init(rng);
  std::fill(p.head_w.mutable_values().begin(), p.head_w.mutable_values().end(), 0.0);
  std::fill(p.head_b.mutable_values().begin(), p.head_b.mutable_values().end(), 0.0);
  std::vector<double> xv(16 * 16 * 16, 0.5);
  SegOutput out = seg_forward(Tensor::from_vector({1, 16, 16, 16}, xv), p);
  for (std::int64_t i = 0; i < out.logits.size(); ++i)
    REQUIRE(out.logits[static_cast<std::size_t>(i)] == 0.0);
  Tensor probs = softmax_cols(reshape(out.logits, {2, 16 * 16 * 16}));
  for (std::int64_t i = 0; i < probs.size(); ++i)
    REQUIRE(probs[static_cast<std::size_t>(i)] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("shape contract holds for 16^3, 32^3, 48^3") {
  Rng rng(2);
  SegNetParams p = SegNetParams::init(rng);
  for (int s : {16, 32, 48}) {
    std::vector<double> xv(static_cast<std::size_t>(s) * s * s, 0.3);
    SegOutput out = seg_forward(Tensor::from_vector({1, s, s, s}, xv), p);
    CHECK(out.logits.shape() == Shape{2, s, s, s});
    CHECK(out.features.shape() == Shape{16, s / 2, s / 2, s / 2});
    for (std::int64_t i = 0; i < out.logits.size(); ++i)
      REQUIRE(std::isfinite(out.logits[static_cast<std::size_t>(i)]));
  }
  // tap level 1 exports full-resolution 8-channel features
  std::vector<double> xv(16 * 16 * 16, 0.3);
  SegOutput out1 = seg_forward(Tensor::from_vector({1, 16, 16, 16}, xv), p, 1);
  CHECK(out1.features.shape() == Shape{8, 16, 16, 16});
}

TEST_CASE("non-divisible input shapes are rejected") {
  Rng rng(3);
  SegNetParams p = SegNetParams::init(rng);
  CHECK_THROWS_AS(seg_forward(Tensor::zeros({1, 18, 16, 16}), p), ContractViolation);
  CHECK_THROWS_AS(seg_forward(Tensor::zeros({2, 16, 16, 16}), p), ContractViolation);
}

TEST_CASE("backbone convolutions pass grad_check") {
  auto r = gradcheck_backbone_convs(3);
  INFO(r.detail);
  CHECK(r.ok);
}

TEST_CASE("ema update arithmetic") {
  Rng rng(4);
  SegNetParams student = SegNetParams::init(rng);
  TeacherState teacher = TeacherState::init_from(student, 0.99);

  // decay=0.99, theta_t=1, theta_s=0 -> 0.99
  teacher.params.enc1_w.mutable_values()[0] = 1.0;
  student.enc1_w.mutable_values()[0] = 0.0;
  ema_update(teacher, student);
  CHECK(teacher.params.enc1_w[0] == Catch::Approx(0.99).margin(1e-15));

  // decay=1 leaves the teacher unchanged
  TeacherState frozen = TeacherState::init_from(student, 1.0);
  const double before = frozen.params.dec1_w[5];
  student.dec1_w.mutable_values()[5] = before + 100.0;
  ema_update(frozen, student);
  CHECK(frozen.params.dec1_w[5] == before);

  // decay=0 copies the student
  TeacherState copy = TeacherState::init_from(student, 0.0);
  student.bott_b.mutable_values()[1] = -3.25;
  ema_update(copy, student);
  CHECK(copy.params.bott_b[1] == -3.25);
}

TEST_CASE("ema is an exact elementwise contraction") {
  Rng rng(5);
  SegNetParams student = SegNetParams::init(rng);
  TeacherState teacher = TeacherState::init_from(student, 0.99);
  // separate the two parameter sets
  for (auto& v : teacher.params.enc2_w.mutable_values()) v += 0.37;
  auto tn = teacher.params.named();
  auto sn = student.named();
  std::vector<std::vector<double>> before(tn.size());
  for (std::size_t i = 0; i < tn.size(); ++i)
    before[i].assign(tn[i].tensor.values().begin(), tn[i].tensor.values().end());
  ema_update(teacher, student);
  for (std::size_t i = 0; i < tn.size(); ++i) {
    auto tv = tn[i].tensor.values();
    auto sv = sn[i].tensor.values();
    for (std::size_t j = 0; j < tv.size(); ++j) {
      const double lhs = std::abs(tv[j] - sv[j]);
      const double rhs = 0.99 * std::abs(before[i][j] - sv[j]);
      REQUIRE(lhs <= rhs + 1e-15 * std::max(1.0, rhs));
    }
  }
}

TEST_CASE("pseudo labels: dominance, tie rule, brute-force scan") {
  // class 1 dominant everywhere
  std::vector<double> logits(2 * 8, 0.0);
  for (int v = 0; v < 8; ++v) logits[8 + v] = 1.0;
  Mask m = pseudo_label(Tensor::from_vector({2, 2, 2, 2}, logits));
  for (auto x : m.data) CHECK(x == 1);

  // exact ties go to class 0
  Mask t = pseudo_label(Tensor::zeros({2, 2, 2, 2}));
  for (auto x : t.data) CHECK(x == 0);

  // random logits vs voxel-by-voxel scan
  Rng rng(6);
  const int n = 4 * 4 * 4;
  std::vector<double> rl(static_cast<std::size_t>(2 * n));
  for (auto& v : rl) v = rng.normal();
  Mask got = pseudo_label(Tensor::from_vector({2, 4, 4, 4}, rl));
  for (int v = 0; v < n; ++v) {
    const int want = rl[static_cast<std::size_t>(n + v)] > rl[static_cast<std::size_t>(v)] ? 1 : 0;
    REQUIRE(got.data[static_cast<std::size_t>(v)] == want);
  }
}

TEST_CASE("teacher forward records no gradient graph") {
  Rng rng(7);
  SegNetParams student = SegNetParams::init(rng);
  TeacherState teacher = TeacherState::init_from(student, 0.99);
  std::vector<double> xv(16 * 16 * 16, 0.4);
  SegOutput out = seg_forward(Tensor::from_vector({1, 16, 16, 16}, xv), teacher.params);
  CHECK_FALSE(out.logits.requires_grad());
  CHECK_FALSE(out.features.requires_grad());
  for (auto& np : teacher.params.named()) CHECK_FALSE(np.tensor.requires_grad());
}
