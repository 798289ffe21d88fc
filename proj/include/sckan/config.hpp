#pragma once

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "sckan/trainer.hpp"

namespace sckan {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error("config field '" + field + "': " + what), field(field) {}
  std::string field;
};

inline constexpr int kConfigSchemaVersion = 1;

// Flat JSON run configuration. A run directory always receives a copy of the
// exact config that produced it; unknown keys are rejected.
struct RunConfig {
  std::string data_dir;
  std::string out_dir;
  TrainConfig train;

  nlohmann::json to_json() const {
    return nlohmann::json{{"schema_version", kConfigSchemaVersion},
                          {"data_dir", data_dir},
                          {"out_dir", out_dir},
                          {"steps", train.steps},
                          {"labeled_per_batch", train.labeled_per_batch},
                          {"unlabeled_per_batch", train.unlabeled_per_batch},
                          {"lr", train.lr},
                          {"momentum", train.momentum},
                          {"ema_decay", train.ema_decay},
                          {"prototype_k", train.prototype_k},
                          {"crop_size", train.crop_size},
                          {"use_ssd", train.use_ssd},
                          {"use_pcc", train.use_pcc},
                          {"use_ckaf", train.use_ckaf},
                          {"fusion_strategy", fusion_name(train.fusion_strategy)},
                          {"tau", train.pccl.tau},
                          {"alpha", train.pccl.alpha},
                          {"lambda_div", train.pccl.lambda_div},
                          {"w_same_region", train.pccl.w_same_region},
                          {"w_diff_region", train.pccl.w_diff_region},
                          {"proto_tau", train.proto_tau},
                          {"tap_level", train.tap_level},
                          {"kan_grid", train.kan_grid},
                          {"kan_degree", train.kan_degree},
                          {"kan_base_branch", train.kan_base_branch},
                          {"train_seed", train.train_seed}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "schema_version", "data_dir",       "out_dir",        "steps",
        "labeled_per_batch", "unlabeled_per_batch", "lr",     "momentum",
        "ema_decay",      "prototype_k",    "crop_size",      "use_ssd",
        "use_pcc",        "use_ckaf",       "fusion_strategy", "tau",
        "alpha",          "lambda_div",     "w_same_region",  "w_diff_region",
        "proto_tau",      "tap_level",      "kan_grid",       "kan_degree",
        "kan_base_branch", "train_seed"};
    if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!known.count(it.key())) throw ConfigError(it.key(), "unknown key");

    auto need = [&](const std::string& key) -> const nlohmann::json& {
      if (!j.contains(key)) throw ConfigError(key, "missing required key");
      return j.at(key);
    };
    auto get_or = [&](const std::string& key, auto fallback) -> decltype(fallback) {
      using T = decltype(fallback);
      if (!j.contains(key)) return fallback;
      try {
        return j.at(key).get<T>();
      } catch (const nlohmann::json::exception&) {
        throw ConfigError(key, "wrong type");
      }
    };

    RunConfig c;
    if (need("schema_version").get<int>() != kConfigSchemaVersion)
      throw ConfigError("schema_version", "unsupported version");
    c.data_dir = need("data_dir").get<std::string>();
    c.out_dir = need("out_dir").get<std::string>();

    TrainConfig d;  // defaults
    c.train.steps = get_or("steps", d.steps);
    c.train.labeled_per_batch = get_or("labeled_per_batch", d.labeled_per_batch);
    c.train.unlabeled_per_batch = get_or("unlabeled_per_batch", d.unlabeled_per_batch);
    c.train.lr = get_or("lr", d.lr);
    c.train.momentum = get_or("momentum", d.momentum);
    c.train.ema_decay = get_or("ema_decay", d.ema_decay);
    c.train.prototype_k = get_or("prototype_k", d.prototype_k);
    c.train.crop_size = get_or("crop_size", d.crop_size);
    c.train.use_ssd = get_or("use_ssd", d.use_ssd);
    c.train.use_pcc = get_or("use_pcc", d.use_pcc);
    c.train.use_ckaf = get_or("use_ckaf", d.use_ckaf);
    if (j.contains("fusion_strategy")) {
      try {
        c.train.fusion_strategy = fusion_from_name(j.at("fusion_strategy").get<std::string>());
      } catch (const std::exception&) {
        throw ConfigError("fusion_strategy", "must be one of kan|mlp|average");
      }
    }
    c.train.pccl.tau = get_or("tau", d.pccl.tau);
    c.train.pccl.alpha = get_or("alpha", d.pccl.alpha);
    c.train.pccl.lambda_div = get_or("lambda_div", d.pccl.lambda_div);
    c.train.pccl.w_same_region = get_or("w_same_region", d.pccl.w_same_region);
    c.train.pccl.w_diff_region = get_or("w_diff_region", d.pccl.w_diff_region);
    c.train.proto_tau = get_or("proto_tau", d.proto_tau);
    c.train.tap_level = get_or("tap_level", d.tap_level);
    c.train.kan_grid = get_or("kan_grid", d.kan_grid);
    c.train.kan_degree = get_or("kan_degree", d.kan_degree);
    c.train.kan_base_branch = get_or("kan_base_branch", d.kan_base_branch);
    c.train.train_seed = get_or("train_seed", d.train_seed);

    validate(c);
    return c;
  }

  static void validate(const RunConfig& c) {
    const TrainConfig& t = c.train;
    if (c.data_dir.empty()) throw ConfigError("data_dir", "must not be empty");
    if (c.out_dir.empty()) throw ConfigError("out_dir", "must not be empty");
    if (t.steps <= 0) throw ConfigError("steps", "must be positive");
    if (t.labeled_per_batch < 1) throw ConfigError("labeled_per_batch", "must be >= 1");
    if (t.unlabeled_per_batch < 1) throw ConfigError("unlabeled_per_batch", "must be >= 1");
    if (!(t.lr > 0.0)) throw ConfigError("lr", "must be positive");
    if (t.momentum < 0.0 || t.momentum >= 1.0) throw ConfigError("momentum", "must be in [0,1)");
    if (t.ema_decay < 0.0 || t.ema_decay > 1.0) throw ConfigError("ema_decay", "must be in [0,1]");
    if (t.prototype_k < 1) throw ConfigError("prototype_k", "must be >= 1");
    if (t.crop_size < 8 || t.crop_size % 4 != 0)
      throw ConfigError("crop_size", "must be >= 8 and divisible by 4");
    if (!(t.pccl.tau > 0.0)) throw ConfigError("tau", "must be positive");
    if (t.pccl.alpha < -1.0 || t.pccl.alpha > 1.0) throw ConfigError("alpha", "must be in [-1,1]");
    if (t.pccl.lambda_div < 0.0 || t.pccl.lambda_div > 1.0)
      throw ConfigError("lambda_div", "must be in [0,1]");
    if (!(t.proto_tau > 0.0)) throw ConfigError("proto_tau", "must be positive");
    if (t.tap_level != 1 && t.tap_level != 2) throw ConfigError("tap_level", "must be 1 or 2");
    if (t.kan_grid < 1) throw ConfigError("kan_grid", "must be >= 1");
    if (t.kan_degree < 1) throw ConfigError("kan_degree", "must be >= 1");
    if ((t.use_pcc || t.use_ckaf) && !t.use_ssd)
      throw ConfigError("use_ssd", "use_pcc/use_ckaf require use_ssd (prototypes)");
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
    }
    return from_json(j);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write config " + path);
    out << to_json().dump(2) << "\n";
  }
};

}  // namespace sckan
