#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sckan/backbone.hpp"
#include "sckan/checkpoint.hpp"
#include "sckan/ckaf.hpp"
#include "sckan/losses.hpp"
#include "sckan/metrics.hpp"
#include "sckan/pcc.hpp"
#include "sckan/phantom.hpp"
#include "sckan/ssd.hpp"

namespace sckan {

struct TrainConfig {
  std::int64_t steps = 2000;  // s_max
  int labeled_per_batch = 4;
  int unlabeled_per_batch = 4;
  double lr = 0.01;
  double momentum = 0.9;
  double ema_decay = 0.99;
  int prototype_k = 3;
  int crop_size = 32;
  bool use_ssd = true;
  bool use_pcc = true;
  bool use_ckaf = true;
  FusionStrategy fusion_strategy = FusionStrategy::kKan;
  PcclConfig pccl;
  double proto_tau = 0.1;
  int tap_level = 2;
  int kan_grid = 5;
  int kan_degree = 3;
  bool kan_base_branch = true;
  std::uint64_t train_seed = 1;
};

struct StepFlags {
  bool no_valid_pairs = false;      // contrastive pool had no usable anchor
  bool div_empty = false;           // no decorrelation group with K >= 2
  int consensus_missing = 0;        // classes without a prototype bank entry
  int skipped_prototypes = 0;       // (sample, class) extractions below K voxels
  bool proto_loss_skipped = false;  // bank did not cover all classes
};

struct StepReport {
  std::int64_t s = 0;
  double lambda_gs = 0.0;
  double seg_l = 0.0;
  double seg_u = 0.0;
  double proto_l = 0.0;
  double proto_u = 0.0;
  double opt = 0.0;
  double div = 0.0;
  double spcl = 0.0;
  double total = 0.0;
  StepFlags flags;

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"s", s},           {"lambda_gs", lambda_gs},
        {"seg_l", seg_l},   {"seg_u", seg_u},
        {"proto_l", proto_l}, {"proto_u", proto_u},
        {"opt", opt},       {"div", div},
        {"spcl", spcl},     {"total", total},
        {"flags",
         {{"no_valid_pairs", flags.no_valid_pairs},
          {"div_empty", flags.div_empty},
          {"consensus_missing", flags.consensus_missing},
          {"skipped_prototypes", flags.skipped_prototypes},
          {"proto_loss_skipped", flags.proto_loss_skipped}}}};
  }
};

class NonFiniteLoss : public std::runtime_error {
 public:
  explicit NonFiniteLoss(const StepReport& report)
      : std::runtime_error("non-finite total loss at step " + std::to_string(report.s) +
                           ": " + report.to_json().dump()),
        report(report) {}
  StepReport report;
};

// SGD with momentum: v <- mu v + g, p <- p - lr v.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, double lr, double momentum)
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    velocity_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i)
      velocity_[i].assign(static_cast<std::size_t>(params_[i].size()), 0.0);
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto g = params_[i].grad();
      auto& v = velocity_[i];
      auto& p = params_[i].mutable_values();
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = momentum_ * v[j] + g[j];
        p[j] -= lr_ * v[j];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
};

// One training batch: already-cropped volume/mask pairs.
struct Batch {
  std::vector<std::pair<Volume, Mask>> labeled;
  std::vector<Volume> unlabeled;
};

struct Trainer {
  TrainConfig cfg;
  SegNetParams student;
  TeacherState teacher;
  FusionParams fusion;
  SgdMomentum opt;
  Rng proto_rng;

  explicit Trainer(const TrainConfig& cfg_)
      : cfg(cfg_),
        student(make_student(cfg_)),
        teacher(TeacherState::init_from(student, cfg_.ema_decay)),
        fusion(make_fusion(cfg_, student)),
        opt(all_params(student, fusion), cfg_.lr, cfg_.momentum),
        proto_rng(Rng(cfg_.train_seed).fork(4)) {}

 private:
  static SegNetParams make_student(const TrainConfig& cfg) {
    Rng rng = Rng(cfg.train_seed).fork(1);
    return SegNetParams::init(rng);
  }
  static FusionParams make_fusion(const TrainConfig& cfg, const SegNetParams&) {
    Rng rng = Rng(cfg.train_seed).fork(2);
    return FusionParams::init(cfg.fusion_strategy, feature_dim(cfg.tap_level), cfg.kan_grid,
                              cfg.kan_degree, rng, cfg.kan_base_branch);
  }
  static std::vector<Tensor> all_params(const SegNetParams& s, const FusionParams& f) {
    std::vector<Tensor> out = s.parameters();
    for (auto& t : f.parameters()) out.push_back(t);
    return out;
  }

 public:
  // Mask at feature resolution for the configured tap level.
  Mask to_feature_res(const Mask& m) const {
    return cfg.tap_level == 2 ? downsample_mask2x(m) : m;
  }

  struct StepLosses {
    Tensor total;
    StepReport report;
  };

  // Builds the full step loss graph without touching optimizer, RNG member
  // state, or the teacher; deterministic given (batch, s, proto_rng state).
  StepLosses compute_losses(const Batch& batch, std::int64_t s, Rng& proto_rng_io) const {
    require(!batch.labeled.empty() && !batch.unlabeled.empty(),
            "train_step: batch needs labeled and unlabeled volumes");
    StepReport report;
    report.s = s;
    report.lambda_gs = warmup(s, cfg.steps);

    // Student forward on all volumes, teacher forward on unlabeled.
    std::vector<SegOutput> lab_out, unlab_out;
    std::vector<Mask> lab_masks, pseudo_masks;
    for (const auto& [vol, mask] : batch.labeled) {
      lab_out.push_back(seg_forward(volume_to_tensor(vol), student, cfg.tap_level));
      lab_masks.push_back(mask);
    }
    std::vector<SegOutput> teacher_out;
    for (const auto& vol : batch.unlabeled) {
      Tensor vt = volume_to_tensor(vol);
      unlab_out.push_back(seg_forward(vt, student, cfg.tap_level));
      teacher_out.push_back(seg_forward(vt, teacher.params, cfg.tap_level));
      pseudo_masks.push_back(pseudo_label(teacher_out.back().logits));
    }

    // Supervised and consistency segmentation losses (batch means).
    std::optional<Tensor> loss_seg_l, loss_seg_u;
    {
      Tensor acc;
      for (std::size_t i = 0; i < lab_out.size(); ++i) {
        Tensor h = hybrid_loss(softmax_cols(reshape(lab_out[i].logits,
                                                    {kNumClasses, static_cast<int>(lab_masks[i].size())})),
                               lab_masks[i]);
        acc = i == 0 ? h : add(acc, h);
      }
      loss_seg_l = mul_scalar(acc, 1.0 / static_cast<double>(lab_out.size()));
    }
    {
      Tensor acc;
      for (std::size_t i = 0; i < unlab_out.size(); ++i) {
        Tensor h = hybrid_loss(softmax_cols(reshape(unlab_out[i].logits,
                                                    {kNumClasses, static_cast<int>(pseudo_masks[i].size())})),
                               pseudo_masks[i]);
        acc = i == 0 ? h : add(acc, h);
      }
      loss_seg_u = mul_scalar(acc, 1.0 / static_cast<double>(unlab_out.size()));
    }

    // Prototype extraction (SSD): student features with ground-truth masks on
    // the labeled side, teacher features with pseudo-label masks on the
    // unlabeled side.
    std::vector<PrototypeSet> labeled_sets, unlabeled_sets;
    std::vector<int> labeled_samples, unlabeled_samples;
    if (cfg.use_ssd) {
      for (std::size_t i = 0; i < lab_out.size(); ++i) {
        const Mask fm = to_feature_res(lab_masks[i]);
        for (int c = 0; c < kNumClasses; ++c) {
          auto set = extract_prototypes(lab_out[i].features, fm, c, cfg.prototype_k, proto_rng_io,
                                        Source::kLabeled);
          if (set) {
            labeled_sets.push_back(std::move(*set));
            labeled_samples.push_back(static_cast<int>(i));
          } else {
            ++report.flags.skipped_prototypes;
          }
        }
      }
      const bool need_unlabeled = cfg.use_pcc || cfg.use_ckaf;
      if (need_unlabeled) {
        for (std::size_t i = 0; i < teacher_out.size(); ++i) {
          const Mask fm = to_feature_res(pseudo_masks[i]);
          for (int c = 0; c < kNumClasses; ++c) {
            auto set = extract_prototypes(teacher_out[i].features, fm, c, cfg.prototype_k,
                                          proto_rng_io, Source::kUnlabeled);
            if (set) {
              unlabeled_sets.push_back(std::move(*set));
              unlabeled_samples.push_back(static_cast<int>(lab_out.size() + i));
            } else {
              ++report.flags.skipped_prototypes;
            }
          }
        }
      }
    }

    // PCC losses over the batch prototype pool.
    std::optional<Tensor> loss_opt, loss_div, loss_spcl;
    if (cfg.use_pcc && cfg.use_ssd) {
      std::vector<TaggedPrototype> pool;
      for (std::size_t i = 0; i < labeled_sets.size(); ++i)
        append_tagged(pool, labeled_sets[i], labeled_samples[i]);
      for (std::size_t i = 0; i < unlabeled_sets.size(); ++i)
        append_tagged(pool, unlabeled_sets[i], unlabeled_samples[i]);
      loss_opt = contrastive_loss(pool, cfg.pccl);
      if (!loss_opt) report.flags.no_valid_pairs = true;

      std::vector<DecorrelationGroup> groups;
      for (std::size_t i = 0; i < labeled_sets.size(); ++i)
        groups.push_back({labeled_samples[i], labeled_sets[i].class_id, labeled_sets[i].subregion});
      for (std::size_t i = 0; i < unlabeled_sets.size(); ++i)
        groups.push_back({unlabeled_samples[i], unlabeled_sets[i].class_id, unlabeled_sets[i].subregion});
      loss_div = decorrelation_loss(groups, cfg.pccl);
      if (!loss_div) report.flags.div_empty = true;

      Tensor opt_term = loss_opt ? *loss_opt : Tensor::scalar(0.0);
      Tensor div_term = loss_div ? *loss_div : Tensor::scalar(0.0);
      loss_spcl = spcl_loss(opt_term, div_term, cfg.pccl);
    }

    // Prototype bank: CKaF consensus, or the labeled per-batch mean when CKaF
    // is off but prototypes are on (the MT+PL baseline).
    std::optional<ConsensusPrototypes> bank;
    if (cfg.use_ssd) {
      if (cfg.use_ckaf) {
        if (!labeled_sets.empty() && !unlabeled_sets.empty()) {
          bank = fuse(labeled_sets, unlabeled_sets, fusion);
        } else {
          bank = ConsensusPrototypes{};
          bank->k = cfg.prototype_k;
          for (int c = 0; c < kNumClasses; ++c) bank->missing.push_back(c);
        }
      } else {
        bank = labeled_mean_bank(labeled_sets);
      }
      bank->step = static_cast<int>(s);
      report.flags.consensus_missing = static_cast<int>(bank->missing.size());
    }

    // Prototype prediction losses at feature resolution.
    std::optional<Tensor> loss_proto_l, loss_proto_u;
    if (bank && bank->covers(kNumClasses)) {
      {
        Tensor acc;
        for (std::size_t i = 0; i < lab_out.size(); ++i) {
          auto pred = prototype_predict(lab_out[i].features, *bank, cfg.proto_tau);
          Tensor h = hybrid_loss(pred.probs, to_feature_res(lab_masks[i]));
          acc = i == 0 ? h : add(acc, h);
        }
        loss_proto_l = mul_scalar(acc, 1.0 / static_cast<double>(lab_out.size()));
      }
      {
        Tensor acc;
        for (std::size_t i = 0; i < unlab_out.size(); ++i) {
          auto pred = prototype_predict(unlab_out[i].features, *bank, cfg.proto_tau);
          Tensor h = hybrid_loss(pred.probs, to_feature_res(pseudo_masks[i]));
          acc = i == 0 ? h : add(acc, h);
        }
        loss_proto_u = mul_scalar(acc, 1.0 / static_cast<double>(unlab_out.size()));
      }
    } else if (cfg.use_ssd) {
      report.flags.proto_loss_skipped = true;
    }

    Tensor total = total_loss(loss_seg_l, loss_seg_u, loss_proto_l, loss_proto_u, loss_spcl,
                              report.lambda_gs);

    report.seg_l = loss_seg_l ? loss_seg_l->item() : 0.0;
    report.seg_u = loss_seg_u ? loss_seg_u->item() : 0.0;
    report.proto_l = loss_proto_l ? loss_proto_l->item() : 0.0;
    report.proto_u = loss_proto_u ? loss_proto_u->item() : 0.0;
    report.opt = loss_opt ? loss_opt->item() : 0.0;
    report.div = loss_div ? loss_div->item() : 0.0;
    report.spcl = loss_spcl ? loss_spcl->item() : 0.0;
    report.total = total.item();
    return {total, report};
  }

  StepReport train_step(const Batch& batch, std::int64_t s) {
    StepLosses losses = compute_losses(batch, s, proto_rng);
    if (!std::isfinite(losses.report.total)) throw NonFiniteLoss(losses.report);
    losses.total.backward();
    opt.step();
    opt.zero_grad();
    ema_update(teacher, student);
    return losses.report;
  }

  // Per-(class, rank) mean of the labeled prototypes; the bank used when
  // prototypes are on but CKaF is off.
  static ConsensusPrototypes labeled_mean_bank(const std::vector<PrototypeSet>& labeled_sets) {
    ConsensusPrototypes bank;
    std::map<int, std::vector<const PrototypeSet*>> by_class;
    for (const auto& s : labeled_sets) by_class[s.class_id].push_back(&s);
    for (int c = 0; c < kNumClasses; ++c) {
      auto it = by_class.find(c);
      if (it == by_class.end()) {
        bank.missing.push_back(c);
        continue;
      }
      const auto& sets = it->second;
      const int k = static_cast<int>(sets.front()->subregion.size());
      bank.k = k;
      std::vector<Tensor> protos;
      for (int rank = 0; rank < k; ++rank) {
        Tensor acc = sets.front()->subregion[static_cast<std::size_t>(rank)];
        for (std::size_t i = 1; i < sets.size(); ++i)
          acc = add(acc, sets[i]->subregion[static_cast<std::size_t>(rank)]);
        protos.push_back(mul_scalar(acc, 1.0 / static_cast<double>(sets.size())));
      }
      bank.by_class[c] = std::move(protos);
    }
    return bank;
  }
};

// --- corpus access ------------------------------------------------------------

struct Corpus {
  SplitManifest manifest;
  std::vector<Phantom> phantoms;

  static std::string volume_path(const std::string& dir, int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "vol_%04d.sckv", id);
    return dir + "/" + buf;
  }
  static std::string mask_path(const std::string& dir, int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "mask_%04d.sckv", id);
    return dir + "/" + buf;
  }

  static Corpus load(const std::string& dir) {
    Corpus c;
    c.manifest = read_manifest(dir + "/manifest.json");
    const int n = static_cast<int>(c.manifest.roles.size());
    c.phantoms.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      c.phantoms[static_cast<std::size_t>(i)].volume = read_volume(volume_path(dir, i));
      c.phantoms[static_cast<std::size_t>(i)].mask = read_mask(mask_path(dir, i));
      c.phantoms[static_cast<std::size_t>(i)].seed =
          phantom_seed(c.manifest.dataset_seed, i);
    }
    return c;
  }
};

// Draws one batch: uniform with-replacement sampling from each pool followed
// by a foreground-guaranteed random crop.
inline Batch draw_batch(const Corpus& corpus, const std::vector<int>& labeled_ids,
                        const std::vector<int>& unlabeled_ids, const TrainConfig& cfg, Rng& rng) {
  Batch b;
  const std::array<int, 3> crop{cfg.crop_size, cfg.crop_size, cfg.crop_size};
  for (int i = 0; i < cfg.labeled_per_batch; ++i) {
    const int id = labeled_ids[static_cast<std::size_t>(rng.index(static_cast<int>(labeled_ids.size())))];
    b.labeled.push_back(random_crop(corpus.phantoms[static_cast<std::size_t>(id)], crop, rng));
  }
  for (int i = 0; i < cfg.unlabeled_per_batch; ++i) {
    const int id = unlabeled_ids[static_cast<std::size_t>(rng.index(static_cast<int>(unlabeled_ids.size())))];
    b.unlabeled.push_back(random_crop(corpus.phantoms[static_cast<std::size_t>(id)], crop, rng).first);
  }
  return b;
}

// Grad-free full-volume prediction with a detached parameter copy.
inline Mask predict_mask(const SegNetParams& params, const Volume& vol, int tap_level) {
  SegNetParams frozen = params.clone_detached();
  SegOutput out = seg_forward(volume_to_tensor(vol), frozen, tap_level);
  return pseudo_label(out.logits);
}

struct EvaluationResult {
  std::vector<CaseMetrics> cases;
  nlohmann::json summary;
};

inline EvaluationResult evaluate_role(const SegNetParams& params, const Corpus& corpus, Role role,
                                      int tap_level) {
  EvaluationResult r;
  for (int id : corpus.manifest.ids_with(role)) {
    const auto& ph = corpus.phantoms[static_cast<std::size_t>(id)];
    CaseMetrics cm;
    cm.case_id = id;
    cm.role = role;
    cm.metrics = evaluate_masks(predict_mask(params, ph.volume, tap_level), ph.mask);
    r.cases.push_back(cm);
  }
  r.summary = metrics_summary(r.cases);
  return r;
}

struct RunResult {
  std::vector<StepReport> reports;
  nlohmann::json metrics;
};

// Full training run: step loop with JSONL logging, final checkpoint, test
// metrics and the labeled/unlabeled Dice gap on the training data.
inline RunResult run_training(const TrainConfig& cfg, const Corpus& corpus,
                              const std::string& out_dir) {
  const auto labeled_ids = corpus.manifest.ids_with(Role::kLabeled);
  const auto unlabeled_ids = corpus.manifest.ids_with(Role::kUnlabeled);
  require(!labeled_ids.empty() && !unlabeled_ids.empty(),
          "run_training: corpus must provide labeled and unlabeled phantoms");

  Trainer trainer(cfg);
  Rng data_rng = Rng(cfg.train_seed).fork(3);

  std::ofstream log(out_dir + "/train_log.jsonl", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write train log in " + out_dir);

  RunResult result;
  result.reports.reserve(static_cast<std::size_t>(cfg.steps));
  for (std::int64_t s = 0; s < cfg.steps; ++s) {
    Batch batch = draw_batch(corpus, labeled_ids, unlabeled_ids, cfg, data_rng);
    StepReport report = trainer.train_step(batch, s);
    log << report.to_json().dump() << "\n";
    result.reports.push_back(report);
  }
  log.close();

  // checkpoint: student + teacher + fusion parameters
  std::vector<NamedParam> to_save;
  for (auto& np : trainer.student.named()) to_save.push_back({"student/" + np.name, np.tensor});
  for (auto& np : trainer.teacher.params.named())
    to_save.push_back({"teacher/" + np.name, np.tensor});
  for (auto& np : trainer.fusion.named()) to_save.push_back({"fusion/" + np.name, np.tensor});
  save_checkpoint(out_dir + "/checkpoint.sckp", to_save);

  EvaluationResult test = evaluate_role(trainer.student, corpus, Role::kTest, cfg.tap_level);
  write_metrics_csv(out_dir + "/test_cases.csv", test.cases);

  // Dice gap between training labeled and unlabeled data (supervision-bias proxy).
  std::vector<std::pair<Role, double>> gap_cases;
  for (Role role : {Role::kLabeled, Role::kUnlabeled}) {
    EvaluationResult ev = evaluate_role(trainer.student, corpus, role, cfg.tap_level);
    for (const auto& c : ev.cases) gap_cases.emplace_back(role, c.metrics.dice);
  }
  GapReport gap = gap_report(gap_cases);

  nlohmann::json metrics;
  metrics["test"] = test.summary;
  metrics["gap"] = {{"labeled_dice", gap.labeled_dice},
                    {"unlabeled_dice", gap.unlabeled_dice},
                    {"lu_gap", gap.gap}};
  std::ofstream mf(out_dir + "/metrics.json", std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write metrics.json in " + out_dir);
  mf << metrics.dump(2) << "\n";
  result.metrics = metrics;
  return result;
}

}  // namespace sckan
