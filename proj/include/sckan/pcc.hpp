#pragma once

#include <map>
#include <optional>
#include <vector>

#include "sckan/ssd.hpp"
#include "sckan/tensor.hpp"

namespace sckan {

struct PcclConfig {
  double tau = 0.1;         // contrastive temperature
  double alpha = 0.5;       // decorrelation hinge threshold
  double lambda_div = 0.5;  // mix between alignment and diversity terms
  double w_same_region = 1.0;
  double w_diff_region = 0.1;
};

// Region index for the class-mean prototype p-bar. Mean vs mean is a
// same-region pair; mean vs any subregion prototype is different-region.
inline constexpr int kMeanRegion = -1;

struct PrototypeTag {
  int class_id = 0;
  int region = 0;  // 0..K-1, or kMeanRegion
  Source source = Source::kLabeled;
  int sample = 0;  // batch bookkeeping only; does not affect weights
};

// Position-aware weight for a same-class prototype pair. Different-class
// pairs are negatives and never consult a weight.
inline double pair_weight(const PrototypeTag& i, const PrototypeTag& j, const PcclConfig& cfg) {
  require(i.class_id == j.class_id, "pair_weight: only defined for same-class pairs");
  return i.region == j.region ? cfg.w_same_region : cfg.w_diff_region;
}

struct TaggedPrototype {
  PrototypeTag tag;
  Tensor vec;
};

// Position-weighted contrastive loss over the complete batch prototype set:
//   L = -(1/|P|) sum_i log(P+_i / (P+_i + P-_i))
// with P+_i = sum_{j in pos(i)} w_ij exp(sim_ij / tau) over same-class pairs
// (self excluded) and P-_i = sum_{j in neg(i)} exp(sim_ij / tau) over
// different-class pairs. Anchors lacking a positive or a negative are
// excluded from the average; returns nullopt when no anchor is valid.
inline std::optional<Tensor> contrastive_loss(const std::vector<TaggedPrototype>& protos,
                                              const PcclConfig& cfg) {
  require(cfg.tau > 0.0, "contrastive_loss: tau must be positive");
  const int n = static_cast<int>(protos.size());
  if (n < 2) return std::nullopt;

  std::vector<Tensor> unit;
  unit.reserve(static_cast<std::size_t>(n));
  for (const auto& p : protos) unit.push_back(l2_normalize(p.vec));

  // exp(sim/tau) per unordered pair; sim and weight are symmetric.
  std::vector<std::vector<Tensor>> kernel(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) kernel[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      Tensor e = exp_t(mul_scalar(dot(unit[static_cast<std::size_t>(i)], unit[static_cast<std::size_t>(j)]), 1.0 / cfg.tau));
      kernel[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = e;
      kernel[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = e;
    }

  std::vector<Tensor> terms;
  for (int i = 0; i < n; ++i) {
    Tensor pos, neg;
    bool has_pos = false, has_neg = false;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const Tensor& e = kernel[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (protos[static_cast<std::size_t>(i)].tag.class_id == protos[static_cast<std::size_t>(j)].tag.class_id) {
        Tensor w = mul_scalar(e, pair_weight(protos[static_cast<std::size_t>(i)].tag, protos[static_cast<std::size_t>(j)].tag, cfg));
        pos = has_pos ? add(pos, w) : w;
        has_pos = true;
      } else {
        neg = has_neg ? add(neg, e) : e;
        has_neg = true;
      }
    }
    if (!has_pos || !has_neg) continue;
    terms.push_back(sub(log_t(add(pos, neg)), log_t(pos)));
  }
  if (terms.empty()) return std::nullopt;
  Tensor acc = terms[0];
  for (std::size_t t = 1; t < terms.size(); ++t) acc = add(acc, terms[t]);
  return mul_scalar(acc, 1.0 / static_cast<double>(terms.size()));
}

// One (sample, class) group of ordered subregion prototypes.
struct DecorrelationGroup {
  int sample = 0;
  int class_id = 0;
  std::vector<Tensor> prototypes;  // K >= 2 to contribute
};

// Positional decorrelation hinge:
//   per sample: (1/|C|) sum_c (1/(K(K-1))) sum_{k != k'} max(0, sim - alpha)
// counting ordered pairs, then averaged over samples that contributed at
// least one class group. |C| is the number of distinct classes in the input.
// Returns nullopt when no group has K >= 2.
inline std::optional<Tensor> decorrelation_loss(const std::vector<DecorrelationGroup>& groups,
                                                const PcclConfig& cfg) {
  std::map<int, bool> classes;
  for (const auto& g : groups) classes[g.class_id] = true;
  const double num_classes = static_cast<double>(classes.size());

  std::map<int, std::vector<const DecorrelationGroup*>> by_sample;
  for (const auto& g : groups) by_sample[g.sample].push_back(&g);

  std::vector<Tensor> sample_terms;
  for (const auto& [sample, gs] : by_sample) {
    Tensor acc;
    bool any = false;
    for (const auto* g : gs) {
      const int k = static_cast<int>(g->prototypes.size());
      if (k < 2) continue;
      Tensor class_acc;
      bool class_any = false;
      for (int a = 0; a < k; ++a)
        for (int b = a + 1; b < k; ++b) {
          Tensor hinge = relu(add_scalar(cosine_sim(g->prototypes[static_cast<std::size_t>(a)],
                                                    g->prototypes[static_cast<std::size_t>(b)]),
                                         -cfg.alpha));
          class_acc = class_any ? add(class_acc, hinge) : hinge;
          class_any = true;
        }
      // ordered pairs double the unordered sum, matching the K(K-1) normalizer
      Tensor val = mul_scalar(class_acc, 2.0 / (static_cast<double>(k) * (k - 1)));
      acc = any ? add(acc, val) : val;
      any = true;
    }
    if (any) sample_terms.push_back(mul_scalar(acc, 1.0 / num_classes));
  }
  if (sample_terms.empty()) return std::nullopt;
  Tensor total = sample_terms[0];
  for (std::size_t i = 1; i < sample_terms.size(); ++i) total = add(total, sample_terms[i]);
  return mul_scalar(total, 1.0 / static_cast<double>(sample_terms.size()));
}

// (1 - lambda_div) * L_opt + lambda_div * L_div
inline Tensor spcl_loss(const Tensor& opt, const Tensor& div, const PcclConfig& cfg) {
  return add(mul_scalar(opt, 1.0 - cfg.lambda_div), mul_scalar(div, cfg.lambda_div));
}

// Tagged flattening of per-sample prototype sets (K subregions plus the mean)
// for the batch-level contrastive pool.
inline void append_tagged(std::vector<TaggedPrototype>& out, const PrototypeSet& set, int sample) {
  for (int k = 0; k < static_cast<int>(set.subregion.size()); ++k)
    out.push_back({{set.class_id, k, set.source, sample}, set.subregion[static_cast<std::size_t>(k)]});
  out.push_back({{set.class_id, kMeanRegion, set.source, sample}, set.mean});
}

}  // namespace sckan
