#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sckan/pcc.hpp"
#include "sckan/verify.hpp"

using namespace sckan;

namespace {

// Independent O(n^2) pair-enumeration oracle working on a plain sim matrix.
double contrastive_oracle(const std::vector<PrototypeTag>& tags,
                          const std::vector<std::vector<double>>& sims, const PcclConfig& cfg) {
  const int n = static_cast<int>(tags.size());
  double total = 0.0;
  int anchors = 0;
  for (int i = 0; i < n; ++i) {
    double pos = 0.0, neg = 0.0;
    bool has_pos = false, has_neg = false;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double e = std::exp(sims[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] / cfg.tau);
      if (tags[static_cast<std::size_t>(i)].class_id == tags[static_cast<std::size_t>(j)].class_id) {
        const double w = tags[static_cast<std::size_t>(i)].region == tags[static_cast<std::size_t>(j)].region
                             ? cfg.w_same_region
                             : cfg.w_diff_region;
        pos += w * e;
        has_pos = true;
      } else {
        neg += e;
        has_neg = true;
      }
    }
    if (!has_pos || !has_neg) continue;
    total += -std::log(pos / (pos + neg));
    ++anchors;
  }
  return anchors == 0 ? 0.0 : total / anchors;
}

double plain_cos(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::max(std::sqrt(aa), 1e-8) * std::max(std::sqrt(bb), 1e-8));
}

std::vector<TaggedPrototype> random_pool(Rng& rng, int n_samples) {
  auto leaves = sckan::detail::random_prototype_leaves(rng, 3, 5, n_samples);
  return sckan::detail::pool_with_means(leaves);
}

}  // namespace

TEST_CASE("pair weights across the full tag enumeration") {
  PcclConfig cfg;
  const PrototypeTag fg_r1_l{1, 1, Source::kLabeled, 0};
  const PrototypeTag fg_r1_u{1, 1, Source::kUnlabeled, 1};
  const PrototypeTag fg_r0{1, 0, Source::kLabeled, 0};
  const PrototypeTag fg_r2{1, 2, Source::kLabeled, 0};
  const PrototypeTag fg_mean_l{1, kMeanRegion, Source::kLabeled, 0};
  const PrototypeTag fg_mean_u{1, kMeanRegion, Source::kUnlabeled, 1};
  const PrototypeTag bg_r1{0, 1, Source::kLabeled, 0};

  CHECK(pair_weight(fg_r1_l, fg_r1_u, cfg) == 1.0);   // same class, same region
  CHECK(pair_weight(fg_r0, fg_r2, cfg) == 0.1);       // same class, different region
  CHECK(pair_weight(fg_mean_l, fg_mean_u, cfg) == 1.0);  // mean-vs-mean is same-region
  CHECK(pair_weight(fg_mean_l, fg_r1_l, cfg) == 0.1);    // mean vs subregion
  CHECK(pair_weight(fg_r1_l, fg_mean_u, cfg) == 0.1);
  CHECK_THROWS_AS(pair_weight(fg_r1_l, bg_r1, cfg), ContractViolation);

  // exhaustive: weight depends only on (same class, same region)
  for (int ra = -1; ra < 3; ++ra)
    for (int rb = -1; rb < 3; ++rb)
      for (int sa = 0; sa < 2; ++sa)
        for (int sb = 0; sb < 2; ++sb) {
          PrototypeTag a{1, ra, sa ? Source::kUnlabeled : Source::kLabeled, sa};
          PrototypeTag b{1, rb, sb ? Source::kUnlabeled : Source::kLabeled, 2 + sb};
          CHECK(pair_weight(a, b, cfg) == (ra == rb ? 1.0 : 0.1));
        }
}

TEST_CASE("hand-computed two-class configuration gives 0.5514") {
  PcclConfig cfg;
  cfg.tau = 1.0;
  std::vector<TaggedPrototype> pool = {
      {{0, 0, Source::kLabeled, 0}, Tensor::from_vector({2}, {1, 0})},
      {{0, 0, Source::kUnlabeled, 1}, Tensor::from_vector({2}, {1, 0})},
      {{1, 0, Source::kLabeled, 0}, Tensor::from_vector({2}, {0, 1})},
      {{1, 0, Source::kUnlabeled, 1}, Tensor::from_vector({2}, {0, 1})},
  };
  auto loss = contrastive_loss(pool, cfg);
  REQUIRE(loss.has_value());
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  CHECK(loss->item() == Catch::Approx(expected).margin(1e-12));
  CHECK(loss->item() == Catch::Approx(0.5514).margin(1e-4));
}

TEST_CASE("collapsed prototypes keep the loss strictly positive") {
  PcclConfig cfg;
  std::vector<TaggedPrototype> pool;
  for (int c = 0; c < 2; ++c)
    for (int s = 0; s < 2; ++s)
      pool.push_back({{c, 0, s ? Source::kUnlabeled : Source::kLabeled, s},
                      Tensor::from_vector({3}, {0.3, -0.2, 0.9})});
  auto loss = contrastive_loss(pool, cfg);
  REQUIRE(loss.has_value());
  CHECK(loss->item() > 0.0);
}

TEST_CASE("contrastive loss is invariant to positive per-vector rescaling") {
  Rng rng(3);
  PcclConfig cfg;
  for (int trial = 0; trial < 10; ++trial) {
    auto pool = random_pool(rng, 1);
    auto base = contrastive_loss(pool, cfg);
    auto scaled_pool = pool;
    for (std::size_t i = 0; i < scaled_pool.size(); ++i) {
      const double s = 0.25 + 3.0 * rng.uniform();
      scaled_pool[i].vec = mul_scalar(scaled_pool[i].vec.detach(), s);
    }
    auto scaled = contrastive_loss(scaled_pool, cfg);
    REQUIRE(base.has_value());
    REQUIRE(scaled.has_value());
    REQUIRE(std::abs(base->item() - scaled->item()) <= 1e-10);
  }
}

TEST_CASE("brute-force pair enumeration reproduces the loss within 1e-10") {
  Rng rng(5);
  PcclConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    auto pool = random_pool(rng, 1);  // 16 entries
    REQUIRE(pool.size() <= 16);
    std::vector<PrototypeTag> tags;
    std::vector<std::vector<double>> sims(pool.size(), std::vector<double>(pool.size(), 0.0));
    for (std::size_t i = 0; i < pool.size(); ++i) {
      tags.push_back(pool[i].tag);
      for (std::size_t j = 0; j < pool.size(); ++j)
        sims[i][j] = plain_cos(pool[i].vec.values(), pool[j].vec.values());
    }
    auto ours = contrastive_loss(pool, cfg);
    REQUIRE(ours.has_value());
    REQUIRE(std::abs(ours->item() - contrastive_oracle(tags, sims, cfg)) <= 1e-10);
  }
}

TEST_CASE("raising a positive same-region similarity never raises the loss") {
  Rng rng(7);
  PcclConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    auto pool = random_pool(rng, 1);
    std::vector<PrototypeTag> tags;
    std::vector<std::vector<double>> sims(pool.size(), std::vector<double>(pool.size(), 0.0));
    for (std::size_t i = 0; i < pool.size(); ++i) {
      tags.push_back(pool[i].tag);
      for (std::size_t j = 0; j < pool.size(); ++j)
        sims[i][j] = plain_cos(pool[i].vec.values(), pool[j].vec.values());
    }
    const double base = contrastive_oracle(tags, sims, cfg);
    // find a positive same-region pair and push its similarity up
    for (std::size_t i = 0; i < pool.size(); ++i)
      for (std::size_t j = i + 1; j < pool.size(); ++j) {
        if (tags[i].class_id != tags[j].class_id || tags[i].region != tags[j].region) continue;
        auto bumped = sims;
        bumped[i][j] = std::min(1.0, bumped[i][j] + 0.05);
        bumped[j][i] = bumped[i][j];
        REQUIRE(contrastive_oracle(tags, bumped, cfg) <= base + 1e-12);
      }
  }
}

TEST_CASE("anchors without positives or negatives are excluded") {
  PcclConfig cfg;
  cfg.tau = 1.0;
  // class 1 has a single prototype: no positive pair, so it is excluded;
  // the two class-0 prototypes each have one positive and one negative.
  std::vector<TaggedPrototype> pool = {
      {{0, 0, Source::kLabeled, 0}, Tensor::from_vector({2}, {1, 0})},
      {{0, 0, Source::kUnlabeled, 1}, Tensor::from_vector({2}, {1, 0})},
      {{1, 0, Source::kLabeled, 0}, Tensor::from_vector({2}, {0, 1})},
  };
  auto loss = contrastive_loss(pool, cfg);
  REQUIRE(loss.has_value());
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(loss->item() == Catch::Approx(expected).margin(1e-12));

  // single class only: negatives never exist -> no valid anchors
  std::vector<TaggedPrototype> one_class = {
      {{0, 0, Source::kLabeled, 0}, Tensor::from_vector({2}, {1, 0})},
      {{0, 1, Source::kLabeled, 0}, Tensor::from_vector({2}, {0, 1})},
  };
  CHECK_FALSE(contrastive_loss(one_class, cfg).has_value());
}

TEST_CASE("decorrelation loss closed forms") {
  PcclConfig cfg;  // alpha = 0.5
  // all pairwise sims <= alpha -> exactly 0
  std::vector<DecorrelationGroup> ortho = {
      {0, 0, {Tensor::from_vector({2}, {1, 0}), Tensor::from_vector({2}, {0, 1})}}};
  auto z = decorrelation_loss(ortho, cfg);
  REQUIRE(z.has_value());
  CHECK(z->item() == 0.0);

  // |C|=1, K=2, identical prototypes, alpha=0.5 -> 0.5
  std::vector<DecorrelationGroup> same = {
      {0, 1, {Tensor::from_vector({2}, {0.6, 0.8}), Tensor::from_vector({2}, {0.6, 0.8})}}};
  auto v = decorrelation_loss(same, cfg);
  REQUIRE(v.has_value());
  CHECK(v->item() == Catch::Approx(0.5).margin(1e-12));

  // alpha = 1 -> 0 for any inputs
  PcclConfig top;
  top.alpha = 1.0;
  Rng rng(5);
  std::vector<DecorrelationGroup> rand_groups;
  for (int s = 0; s < 3; ++s) {
    DecorrelationGroup g{s, 0, {}};
    for (int k = 0; k < 3; ++k) g.prototypes.push_back(Tensor::param_normal({4}, rng, 1.0));
    rand_groups.push_back(g);
  }
  auto t = decorrelation_loss(rand_groups, top);
  REQUIRE(t.has_value());
  CHECK(t->item() <= 1e-15);
}

TEST_CASE("decorrelation: symmetric in k and k', always nonnegative, skips K<2") {
  Rng rng(6);
  PcclConfig cfg;
  cfg.alpha = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    DecorrelationGroup g{0, 0, {}};
    for (int k = 0; k < 4; ++k) g.prototypes.push_back(Tensor::param_normal({5}, rng, 1.0));
    auto fwd = decorrelation_loss({g}, cfg);
    DecorrelationGroup rev{0, 0, {g.prototypes.rbegin(), g.prototypes.rend()}};
    auto bwd = decorrelation_loss({rev}, cfg);
    REQUIRE(fwd.has_value());
    REQUIRE(bwd.has_value());
    REQUIRE(fwd->item() >= 0.0);
    REQUIRE(std::abs(fwd->item() - bwd->item()) <= 1e-12);
  }
  // groups with fewer than two prototypes cannot contribute
  DecorrelationGroup lone{0, 0, {Tensor::from_vector({2}, {1, 0})}};
  CHECK_FALSE(decorrelation_loss({lone}, cfg).has_value());
}

TEST_CASE("spcl mixing endpoints and midpoint") {
  PcclConfig cfg;
  Tensor opt = Tensor::scalar(0.6), div = Tensor::scalar(0.2);
  cfg.lambda_div = 0.0;
  CHECK(spcl_loss(opt, div, cfg).item() == Catch::Approx(0.6).margin(1e-15));
  cfg.lambda_div = 1.0;
  CHECK(spcl_loss(opt, div, cfg).item() == Catch::Approx(0.2).margin(1e-15));
  cfg.lambda_div = 0.5;
  CHECK(spcl_loss(opt, div, cfg).item() == Catch::Approx(0.4).margin(1e-15));
}

TEST_CASE("pcc losses pass grad_check on random K=3 two-class sets") {
  auto c = gradcheck_contrastive(5);
  INFO(c.detail);
  CHECK(c.ok);
  auto d = gradcheck_decorrelation(5);
  INFO(d.detail);
  CHECK(d.ok);
}
