#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sckan/gradcheck.hpp"
#include "sckan/kan.hpp"
#include "sckan/ops.hpp"
#include "sckan/pcc.hpp"
#include "sckan/ssd.hpp"
#include "sckan/tensor.hpp"
#include "sckan/volume.hpp"

namespace sckan {

class ConsensusUnavailable : public std::runtime_error {
 public:
  explicit ConsensusUnavailable(int class_id)
      : std::runtime_error("no consensus prototypes for class " + std::to_string(class_id)),
        class_id(class_id) {}
  int class_id;
};

enum class FusionStrategy { kKan, kMlp, kAverage };

inline std::string fusion_name(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kKan: return "kan";
    case FusionStrategy::kMlp: return "mlp";
    case FusionStrategy::kAverage: return "average";
  }
  return "?";
}

inline FusionStrategy fusion_from_name(const std::string& s) {
  if (s == "kan") return FusionStrategy::kKan;
  if (s == "mlp") return FusionStrategy::kMlp;
  if (s == "average") return FusionStrategy::kAverage;
  throw std::runtime_error("unknown fusion strategy '" + s + "'");
}

// Two-stage fusion wiring, shared across (class, rank) pairs:
//   source-specific D -> D, batch mean pool, concat to 2D, stage1 2D -> D_h,
//   stage2 D_h -> D. The MLP baseline mirrors the shapes with
//   silu(affine) layers; the average baseline has no learned transform.
struct FusionParams {
  FusionStrategy strategy = FusionStrategy::kKan;
  int dim = 16;
  int hidden = 16;

  KanLayerParams kan_l, kan_u, kan_stage1, kan_stage2;
  Tensor mlp_l_w, mlp_l_b, mlp_u_w, mlp_u_b;
  Tensor mlp_s1_w, mlp_s1_b, mlp_s2_w, mlp_s2_b;

  static FusionParams init(FusionStrategy strategy, int dim, int grid_intervals, int degree,
                           Rng& rng, bool kan_use_base = true) {
    FusionParams p;
    p.strategy = strategy;
    p.dim = dim;
    p.hidden = dim;
    if (strategy == FusionStrategy::kKan) {
      p.kan_l = kan_init(dim, dim, grid_intervals, degree, rng, kan_use_base);
      p.kan_u = kan_init(dim, dim, grid_intervals, degree, rng, kan_use_base);
      p.kan_stage1 = kan_init(2 * dim, p.hidden, grid_intervals, degree, rng, kan_use_base);
      p.kan_stage2 = kan_init(p.hidden, dim, grid_intervals, degree, rng, kan_use_base);
    } else if (strategy == FusionStrategy::kMlp) {
      auto affine = [&](int in, int out, Tensor& w, Tensor& b) {
        w = Tensor::param_normal({out, in}, rng, std::sqrt(2.0 / in));
        b = Tensor::param(Shape{out}, std::vector<double>(static_cast<std::size_t>(out), 0.0));
      };
      affine(dim, dim, p.mlp_l_w, p.mlp_l_b);
      affine(dim, dim, p.mlp_u_w, p.mlp_u_b);
      affine(2 * dim, p.hidden, p.mlp_s1_w, p.mlp_s1_b);
      affine(p.hidden, dim, p.mlp_s2_w, p.mlp_s2_b);
    }
    return p;
  }

  std::vector<NamedParam> named() const {
    std::vector<NamedParam> out;
    if (strategy == FusionStrategy::kKan) {
      auto push = [&](const std::string& base, const KanLayerParams& k) {
        out.push_back({base + "_coeffs", k.spline_coeffs});
        out.push_back({base + "_base", k.base_weight});
        out.push_back({base + "_scale", k.spline_scale});
      };
      push("kan_l", kan_l);
      push("kan_u", kan_u);
      push("kan_s1", kan_stage1);
      push("kan_s2", kan_stage2);
    } else if (strategy == FusionStrategy::kMlp) {
      out = {{"mlp_l_w", mlp_l_w}, {"mlp_l_b", mlp_l_b}, {"mlp_u_w", mlp_u_w},
             {"mlp_u_b", mlp_u_b}, {"mlp_s1_w", mlp_s1_w}, {"mlp_s1_b", mlp_s1_b},
             {"mlp_s2_w", mlp_s2_w}, {"mlp_s2_b", mlp_s2_b}};
    }
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& np : named()) out.push_back(np.tensor);
    return out;
  }
};

// Fused consensus prototype bank, rebuilt every step from the current batch.
struct ConsensusPrototypes {
  int k = 0;
  std::map<int, std::vector<Tensor>> by_class;  // class -> K prototypes [D]
  std::vector<int> missing;                     // classes lacking one source
  int step = -1;

  bool covers(int num_classes) const {
    for (int c = 0; c < num_classes; ++c)
      if (!by_class.count(c)) return false;
    return true;
  }
};

namespace detail {

// Mean over the rows of an [B, D] matrix -> [D].
inline Tensor mean_rows(const Tensor& m) {
  const int b = m.shape()[0];
  Tensor acc = slice_row(m, 0);
  for (int i = 1; i < b; ++i) acc = add(acc, slice_row(m, i));
  return mul_scalar(acc, 1.0 / static_cast<double>(b));
}

inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  Tensor flat = concat(rows);
  return reshape(flat, {static_cast<int>(rows.size()), rows[0].shape()[0]});
}

}  // namespace detail

// Batch fusion of labeled and unlabeled prototype sets into per-(class, rank)
// consensus prototypes. Prototypes are L2-normalized on entry so the KAN grid
// range [-1,1] covers its inputs; unlabeled prototypes are gradient-detached
// (they originate from the teacher). Classes with an empty source are listed
// in `missing` and produce no bank entry.
inline ConsensusPrototypes fuse(const std::vector<PrototypeSet>& labeled_sets,
                                const std::vector<PrototypeSet>& unlabeled_sets,
                                const FusionParams& params) {
  require(!labeled_sets.empty() && !unlabeled_sets.empty(),
          "fuse: both prototype lists must be non-empty");
  int k = static_cast<int>(labeled_sets.front().subregion.size());
  for (const auto& s : labeled_sets)
    require(static_cast<int>(s.subregion.size()) == k, "fuse: inconsistent K");
  for (const auto& s : unlabeled_sets)
    require(static_cast<int>(s.subregion.size()) == k, "fuse: inconsistent K");

  std::map<int, std::vector<const PrototypeSet*>> labeled_by_class, unlabeled_by_class;
  for (const auto& s : labeled_sets) labeled_by_class[s.class_id].push_back(&s);
  for (const auto& s : unlabeled_sets) unlabeled_by_class[s.class_id].push_back(&s);

  std::map<int, bool> classes;
  for (const auto& [c, _] : labeled_by_class) classes[c] = true;
  for (const auto& [c, _] : unlabeled_by_class) classes[c] = true;

  ConsensusPrototypes out;
  out.k = k;
  for (const auto& [c, _] : classes) {
    if (!labeled_by_class.count(c) || !unlabeled_by_class.count(c)) {
      out.missing.push_back(c);
      continue;
    }
    const auto& lsets = labeled_by_class[c];
    const auto& usets = unlabeled_by_class[c];
    std::vector<Tensor> bank;
    bank.reserve(static_cast<std::size_t>(k));
    for (int rank = 0; rank < k; ++rank) {
      std::vector<Tensor> lrows, urows;
      for (const auto* s : lsets) lrows.push_back(l2_normalize(s->subregion[static_cast<std::size_t>(rank)]));
      for (const auto* s : usets)
        urows.push_back(l2_normalize(s->subregion[static_cast<std::size_t>(rank)].detach()));
      Tensor lmat = detail::stack_rows(lrows);
      Tensor umat = detail::stack_rows(urows);

      Tensor fused;
      switch (params.strategy) {
        case FusionStrategy::kAverage: {
          fused = mul_scalar(add(detail::mean_rows(lmat), detail::mean_rows(umat)), 0.5);
          break;
        }
        case FusionStrategy::kKan: {
          Tensor hl = detail::mean_rows(kan_forward(lmat, params.kan_l));
          Tensor hu = detail::mean_rows(kan_forward(umat, params.kan_u));
          Tensor h = kan_forward(reshape(concat({hl, hu}), {1, 2 * params.dim}), params.kan_stage1);
          fused = reshape(kan_forward(h, params.kan_stage2), {params.dim});
          break;
        }
        case FusionStrategy::kMlp: {
          Tensor hl = detail::mean_rows(silu(linear(lmat, params.mlp_l_w, params.mlp_l_b)));
          Tensor hu = detail::mean_rows(silu(linear(umat, params.mlp_u_w, params.mlp_u_b)));
          Tensor h = silu(linear(reshape(concat({hl, hu}), {1, 2 * params.dim}), params.mlp_s1_w,
                                 params.mlp_s1_b));
          fused = reshape(silu(linear(h, params.mlp_s2_w, params.mlp_s2_b)), {params.dim});
          break;
        }
      }
      bank.push_back(fused);
    }
    out.by_class[c] = std::move(bank);
  }
  return out;
}

struct PrototypePrediction {
  Tensor probs;  // [|C|, h, w, z]; each voxel sums to 1
  Mask labels;   // argmax classes, ties to the lower index
};

// Voxelwise prototype-based prediction: score_c(v) = max_k cos(F(v), P_k^c),
// probs = softmax over classes of score / tau_p.
inline PrototypePrediction prototype_predict(const Tensor& features,
                                             const ConsensusPrototypes& consensus, double tau_p,
                                             int num_classes = kNumClasses) {
  require(features.shape().size() == 4, "prototype_predict: features must be [D,h,w,z]");
  require(tau_p > 0.0, "prototype_predict: tau_p must be positive");
  for (int c = 0; c < num_classes; ++c)
    if (!consensus.by_class.count(c)) throw ConsensusUnavailable(c);

  const int d = features.shape()[0];
  const int h = features.shape()[1], w = features.shape()[2], z = features.shape()[3];
  const int n = h * w * z;
  const int k = consensus.k;

  Tensor fhat = normalize_cols(reshape(features, {d, n}));
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(num_classes * k));
  for (int c = 0; c < num_classes; ++c) {
    const auto& bank = consensus.by_class.at(c);
    require(static_cast<int>(bank.size()) == k, "prototype_predict: bank size mismatch");
    for (const auto& p : bank) rows.push_back(l2_normalize(p));
  }
  Tensor pmat = detail::stack_rows(rows);           // [C*K, D]
  Tensor sims = matmul(pmat, fhat);                 // [C*K, n] cosine scores
  Tensor scores = group_max_rows(sims, k);          // [C, n]
  Tensor probs = softmax_cols(mul_scalar(scores, 1.0 / tau_p));

  PrototypePrediction out;
  out.labels = Mask(h, w, z);
  for (int v = 0; v < n; ++v) {
    int best = 0;
    double bv = scores[static_cast<std::size_t>(v)];
    for (int c = 1; c < num_classes; ++c) {
      const double s = scores[static_cast<std::size_t>(c) * n + v];
      if (s > bv) {
        bv = s;
        best = c;
      }
    }
    out.labels.data[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(best);
  }
  out.probs = reshape(probs, {num_classes, h, w, z});
  return out;
}

}  // namespace sckan
