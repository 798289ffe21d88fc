#pragma once

#include <string>
#include <vector>

#include "sckan/backbone.hpp"
#include "sckan/ckaf.hpp"
#include "sckan/gradcheck.hpp"
#include "sckan/kan.hpp"
#include "sckan/losses.hpp"
#include "sckan/pcc.hpp"
#include "sckan/trainer.hpp"

namespace sckan {

struct SuiteResult {
  std::string op;
  int seeds = 0;
  std::int64_t entries = 0;
  double worst = 0.0;
  std::int64_t kink_retries = 0;
  bool ok = true;
  std::string detail;
};

namespace detail {

inline void fold(SuiteResult& r, const GradCheckReport& rep) {
  r.entries += rep.entries_checked;
  r.kink_retries += rep.kink_retries;
  if (rep.max_rel_error > r.worst || !rep.finite) {
    r.worst = std::max(r.worst, rep.max_rel_error);
    r.detail = rep.describe();
  }
  r.ok = r.ok && rep.ok;
}

// Leaf subregion prototypes for the verification pools. Mean prototypes are
// derived tensors and must be rebuilt inside every loss evaluation, otherwise
// finite differences silently miss that path.
inline std::vector<TaggedPrototype> random_prototype_leaves(Rng& rng, int k, int dim,
                                                            int samples_per_source) {
  std::vector<TaggedPrototype> leaves;
  int sample = 0;
  for (Source src : {Source::kLabeled, Source::kUnlabeled})
    for (int s = 0; s < samples_per_source; ++s, ++sample)
      for (int c = 0; c < kNumClasses; ++c)
        for (int r = 0; r < k; ++r)
          leaves.push_back({{c, r, src, sample}, Tensor::param_normal({dim}, rng, 1.0)});
  return leaves;
}

// Pool = leaves + freshly computed per-(sample, class) mean prototypes.
inline std::vector<TaggedPrototype> pool_with_means(const std::vector<TaggedPrototype>& leaves) {
  std::vector<TaggedPrototype> pool = leaves;
  std::map<std::tuple<int, int, int>, std::vector<const TaggedPrototype*>> by_group;
  for (const auto& p : leaves)
    by_group[{p.tag.sample, p.tag.class_id, static_cast<int>(p.tag.source)}].push_back(&p);
  for (const auto& [key, group] : by_group) {
    Tensor acc = group[0]->vec;
    for (std::size_t i = 1; i < group.size(); ++i) acc = add(acc, group[i]->vec);
    pool.push_back({{group[0]->tag.class_id, kMeanRegion, group[0]->tag.source,
                     group[0]->tag.sample},
                    mul_scalar(acc, 1.0 / static_cast<double>(group.size()))});
  }
  return pool;
}

}  // namespace detail

inline SuiteResult gradcheck_kan_layer(int seeds) {
  SuiteResult r{"kan_linear", seeds};
  for (int seed = 1; seed <= seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) * 7919);
    const int in = 3 + rng.index(5), out = 3 + rng.index(5);
    KanLayerParams kp = kan_init(in, out, 5, 3, rng, seed % 2 == 0);
    Tensor x = Tensor::param_normal({3, in}, rng, 0.6);
    auto loss = [&] {
      Tensor y = kan_forward(x, kp);
      return mean(mul(y, y));
    };
    detail::fold(r, grad_check(loss, {{"x", x},
                                      {"spline_coeffs", kp.spline_coeffs},
                                      {"base_weight", kp.base_weight},
                                      {"spline_scale", kp.spline_scale}}));
  }
  return r;
}

inline SuiteResult gradcheck_contrastive(int seeds) {
  SuiteResult r{"contrastive_loss", seeds};
  for (int seed = 1; seed <= seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) * 104729);
    auto leaves = detail::random_prototype_leaves(rng, 3, 6, 1);
    PcclConfig cfg;
    std::vector<NamedParam> params;
    int idx = 0;
    for (auto& p : leaves) params.push_back({"proto" + std::to_string(idx++), p.vec});
    auto loss = [&] { return *contrastive_loss(detail::pool_with_means(leaves), cfg); };
    detail::fold(r, grad_check(loss, params));
  }
  return r;
}

inline SuiteResult gradcheck_decorrelation(int seeds) {
  SuiteResult r{"decorrelation_loss", seeds};
  for (int seed = 1; seed <= seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) * 1299709);
    PcclConfig cfg;
    cfg.alpha = -0.2;  // keep hinges active so gradients flow
    std::vector<DecorrelationGroup> groups;
    std::vector<NamedParam> params;
    for (int sample = 0; sample < 2; ++sample)
      for (int c = 0; c < kNumClasses; ++c) {
        DecorrelationGroup g{sample, c, {}};
        for (int k = 0; k < 3; ++k) {
          Tensor v = Tensor::param_normal({6}, rng, 1.0);
          g.prototypes.push_back(v);
          params.push_back({"p_s" + std::to_string(sample) + "_c" + std::to_string(c) + "_k" +
                                std::to_string(k),
                            v});
        }
        groups.push_back(g);
      }
    auto loss = [&] { return *decorrelation_loss(groups, cfg); };
    detail::fold(r, grad_check(loss, params));
  }
  return r;
}

inline SuiteResult gradcheck_spcl(int seeds) {
  SuiteResult r{"spcl_loss", seeds};
  for (int seed = 1; seed <= seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) * 15485863);
    PcclConfig cfg;
    cfg.alpha = -0.1;
    auto leaves = detail::random_prototype_leaves(rng, 3, 6, 1);
    std::vector<DecorrelationGroup> groups;
    std::vector<NamedParam> params;
    int idx = 0;
    std::map<std::pair<int, int>, DecorrelationGroup> by_key;
    for (auto& p : leaves) {
      params.push_back({"proto" + std::to_string(idx++), p.vec});
      auto& g = by_key[{p.tag.sample, p.tag.class_id}];
      g.sample = p.tag.sample;
      g.class_id = p.tag.class_id;
      g.prototypes.push_back(p.vec);
    }
    for (auto& [_, g] : by_key) groups.push_back(g);
    auto loss = [&] {
      return spcl_loss(*contrastive_loss(detail::pool_with_means(leaves), cfg),
                       *decorrelation_loss(groups, cfg), cfg);
    };
    detail::fold(r, grad_check(loss, params));
  }
  return r;
}

inline SuiteResult gradcheck_fusion(int seeds) {
  SuiteResult r{"ckaf_fuse", seeds};
  for (int seed = 1; seed <= seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) * 32452843);
    const FusionStrategy strategy = seed % 2 == 0 ? FusionStrategy::kKan : FusionStrategy::kMlp;
    const int dim = 8, k = 3;
    FusionParams fp = FusionParams::init(strategy, dim, 5, 3, rng);
    std::vector<PrototypeSet> lsets, usets;
    std::vector<NamedParam> params;
    for (int s = 0; s < 2; ++s)
      for (int c = 0; c < kNumClasses; ++c) {
        PrototypeSet set;
        set.class_id = c;
        set.source = Source::kLabeled;
        for (int kk = 0; kk < k; ++kk) {
          Tensor v = Tensor::param_normal({dim}, rng, 1.0);
          set.subregion.push_back(v);
          params.push_back({"lab_s" + std::to_string(s) + "_c" + std::to_string(c) + "_k" +
                                std::to_string(kk),
                            v});
        }
        set.mean = mul_scalar(add(add(set.subregion[0], set.subregion[1]), set.subregion[2]),
                              1.0 / 3.0);
        lsets.push_back(set);
      }
    for (int s = 0; s < 2; ++s)
      for (int c = 0; c < kNumClasses; ++c) {
        PrototypeSet set;
        set.class_id = c;
        set.source = Source::kUnlabeled;
        for (int kk = 0; kk < k; ++kk)
          set.subregion.push_back(Tensor::param_normal({dim}, rng, 1.0).detach());
        set.mean = mul_scalar(add(add(set.subregion[0], set.subregion[1]), set.subregion[2]),
                              1.0 / 3.0);
        usets.push_back(set);
      }
    for (auto& np : fp.named()) params.push_back(np);
    auto loss = [&] {
      ConsensusPrototypes bank = fuse(lsets, usets, fp);
      Tensor acc;
      bool first = true;
      for (auto& [c, protos] : bank.by_class)
        for (auto& p : protos) {
          Tensor term = sum(mul(p, p));
          acc = first ? term : add(acc, term);
          first = false;
        }
      return acc;
    };
    detail::fold(r, grad_check(loss, params));
  }
  return r;
}

inline SuiteResult gradcheck_backbone_convs(int seeds, std::size_t entries_per_tensor = 96) {
  SuiteResult r{"backbone_seg_forward", seeds};
  for (int seed = 1; seed <= seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) * 49979687);
    SegNetParams p = SegNetParams::init(rng);
    std::vector<double> xv(8 * 8 * 8);
    for (auto& v : xv) v = rng.uniform();
    Tensor x = Tensor::from_vector({1, 8, 8, 8}, xv);
    auto loss = [&] {
      SegOutput out = seg_forward(x, p);
      return add(mean(mul(out.logits, out.logits)), mean(mul(out.features, out.features)));
    };
    detail::fold(r, grad_check(loss, p.named(), 1e-5, 1e-4, entries_per_tensor,
                               static_cast<std::uint64_t>(seed)));
  }
  return r;
}

inline SuiteResult gradcheck_hybrid(int seeds) {
  SuiteResult r{"hybrid_loss", seeds};
  for (int seed = 1; seed <= seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) * 86028121);
    const int n = 4 * 4 * 4;
    Tensor logits = Tensor::param_normal({kNumClasses, n}, rng, 1.0);
    Mask target(4, 4, 4);
    for (auto& t : target.data) t = static_cast<std::uint8_t>(rng.index(2));
    auto loss = [&] { return hybrid_loss(softmax_cols(logits), target); };
    detail::fold(r, grad_check(loss, {{"logits", logits}}));
  }
  return r;
}

// Whole-step total loss against every trainable parameter, on tiny 8^3 crops
// so finite differences stay cheap. Entry subsets differ per seed, so coverage
// accumulates across seeds.
inline SuiteResult gradcheck_total_loss(int seeds, std::size_t entries_per_tensor = 8) {
  SuiteResult r{"trainer_total_loss", seeds};
  for (int seed = 1; seed <= seeds; ++seed) {
    TrainConfig cfg;
    cfg.crop_size = 8;
    cfg.steps = 100;
    cfg.prototype_k = 2;
    cfg.train_seed = static_cast<std::uint64_t>(seed) * 275604541;
    Trainer trainer(cfg);

    Rng rng(cfg.train_seed ^ 0xfeedbeef);
    Batch batch;
    auto random_volume = [&](bool tube) {
      Volume v(8, 8, 8);
      Mask m(8, 8, 8);
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
          for (int k = 0; k < 8; ++k) {
            const bool fg = tube && i >= 2 && i <= 5 && std::abs(j - 4) + std::abs(k - 4) <= 2;
            m.at(i, j, k) = fg ? 1 : 0;
            v.at(i, j, k) = std::clamp((fg ? 0.7 : 0.3) + rng.normal(0.0, 0.08), 0.0, 1.0);
          }
      return std::pair{v, m};
    };
    for (int i = 0; i < 2; ++i) batch.labeled.push_back(random_volume(true));
    for (int i = 0; i < 2; ++i) batch.unlabeled.push_back(random_volume(true).first);

    std::vector<NamedParam> params;
    for (auto& np : trainer.student.named()) params.push_back(np);
    for (auto& np : trainer.fusion.named()) params.push_back(np);
    auto loss = [&] {
      Rng proto_rng(42);  // fresh stream per evaluation keeps the loss deterministic
      return trainer.compute_losses(batch, 50, proto_rng).total;
    };
    detail::fold(r, grad_check(loss, params, 1e-5, 1e-4, entries_per_tensor,
                               static_cast<std::uint64_t>(seed)));
  }
  return r;
}

inline std::vector<SuiteResult> gradcheck_module(const std::string& module, int seeds = 20) {
  std::vector<SuiteResult> out;
  const bool all = module == "all";
  if (all || module == "kan") out.push_back(gradcheck_kan_layer(seeds));
  if (all || module == "pcc") {
    out.push_back(gradcheck_contrastive(seeds));
    out.push_back(gradcheck_decorrelation(seeds));
    out.push_back(gradcheck_spcl(seeds));
  }
  if (all || module == "ckaf") out.push_back(gradcheck_fusion(seeds));
  if (all || module == "trainer") {
    out.push_back(gradcheck_hybrid(seeds));
    out.push_back(gradcheck_backbone_convs(seeds));
    out.push_back(gradcheck_total_loss(seeds));
  }
  require(!out.empty(), "gradcheck_module: unknown module '" + module + "'");
  return out;
}

}  // namespace sckan
