// Command-line surface: data generation, training, evaluation, gradient
// checking, and ablation grids.
//
// Exit codes: 0 success, 2 config/usage error, 3 numerical failure.

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>
#include <vector>

#include "sckan/sckan.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

int cmd_gen_data(std::uint64_t seed, int count, int shape, const std::string& out,
                 double labeled_frac, double test_frac) {
  fs::create_directories(out);
  const std::array<int, 3> dims{shape, shape, shape};
  sckan::SplitManifest manifest = sckan::make_split(seed, count, dims, labeled_frac, test_frac);
  for (int i = 0; i < count; ++i) {
    sckan::Phantom ph = sckan::gen_phantom(sckan::phantom_seed(seed, i), dims);
    sckan::write_volume(sckan::Corpus::volume_path(out, i), ph.volume);
    sckan::write_mask(sckan::Corpus::mask_path(out, i), ph.mask);
  }
  sckan::write_manifest(out + "/manifest.json", manifest);
  std::printf("wrote %d phantom pairs + manifest to %s\n", count, out.c_str());
  return kExitOk;
}

int cmd_train(const std::string& config_path) {
  sckan::RunConfig cfg = sckan::RunConfig::load(config_path);
  fs::create_directories(cfg.out_dir);
  cfg.save(cfg.out_dir + "/config.json");
  sckan::Corpus corpus = sckan::Corpus::load(cfg.data_dir);
  sckan::RunResult result = sckan::run_training(cfg.train, corpus, cfg.out_dir);
  const auto& last = result.reports.back();
  std::printf("finished %lld steps: total=%.4f seg_l=%.4f seg_u=%.4f proto_l=%.4f\n",
              static_cast<long long>(cfg.train.steps), last.total, last.seg_l, last.seg_u,
              last.proto_l);
  std::printf("test dice %.4f +- %.4f\n",
              result.metrics["test"]["dice"]["mean"].get<double>(),
              result.metrics["test"]["dice"]["std"].get<double>());
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& role,
             const std::string& out_dir, int tap_level) {
  fs::create_directories(out_dir);
  sckan::Corpus corpus = sckan::Corpus::load(data_dir);
  auto loaded = sckan::load_checkpoint(checkpoint);
  sckan::Rng rng(0);
  sckan::SegNetParams params = sckan::SegNetParams::init(rng);
  sckan::restore_params(loaded, params.named(), "student/");
  sckan::EvaluationResult ev =
      sckan::evaluate_role(params, corpus, sckan::role_from_name(role), tap_level);
  sckan::write_metrics_csv(out_dir + "/cases.csv", ev.cases);
  std::ofstream out(out_dir + "/summary.json", std::ios::trunc);
  out << ev.summary.dump(2) << "\n";
  std::printf("%s\n", ev.summary.dump().c_str());
  return kExitOk;
}

int cmd_gradcheck(const std::string& module, int seeds) {
  std::vector<sckan::SuiteResult> results = sckan::gradcheck_module(module, seeds);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-22s seeds=%-3d entries=%-8lld worst=%.3e kink_retries=%lld %s\n", r.op.c_str(),
                r.seeds, static_cast<long long>(r.entries), r.worst,
                static_cast<long long>(r.kink_retries), r.ok ? "PASS" : "FAIL");
    if (!r.ok) std::printf("  %s\n", r.detail.c_str());
    ok = ok && r.ok;
  }
  return ok ? kExitOk : 1;
}

struct GridCell {
  std::string name;
  json overrides;
};

struct CellOutcome {
  std::string name;
  std::vector<json> run_metrics;  // per completed seed
  std::vector<std::string> failures;
};

int grid_parallelism() {
  if (const char* env = std::getenv("SCKAN_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs one grid cell seed in a child process so cells are seed-isolated;
// falls back to an in-process run when spawning is unavailable.
bool run_cell_process(const std::string& self, const std::string& config_path,
                      std::string& error) {
  const std::string cmd = "\"" + self + "\" train --config \"" + config_path + "\" > \"" +
                          config_path + ".log\" 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc != 0) {
    error = "train exited with status " + std::to_string(rc);
    return false;
  }
  return true;
}

int cmd_ablate(const std::string& grid_path, const std::string& self_path) {
  std::ifstream in(grid_path);
  if (!in) {
    std::fprintf(stderr, "cannot open grid file %s\n", grid_path.c_str());
    return kExitConfig;
  }
  json grid;
  try {
    grid = json::parse(in);
  } catch (const json::exception& e) {
    std::fprintf(stderr, "grid file is not valid JSON: %s\n", e.what());
    return kExitConfig;
  }

  if (!grid.contains("cells") || !grid["cells"].is_array() || grid["cells"].empty()) {
    std::fprintf(stderr, "grid must list at least one cell\n");
    return kExitConfig;
  }
  if (!grid.contains("base") || !grid.contains("out_dir") || !grid.contains("seeds") ||
      !grid["seeds"].is_array() || grid["seeds"].empty()) {
    std::fprintf(stderr, "grid needs base, out_dir and a non-empty seeds list\n");
    return kExitConfig;
  }

  const std::string out_root = grid["out_dir"].get<std::string>();
  fs::create_directories(out_root);
  std::vector<GridCell> cells;
  for (const auto& c : grid["cells"])
    cells.push_back({c.at("name").get<std::string>(),
                     c.contains("overrides") ? c["overrides"] : json::object()});
  const std::vector<std::uint64_t> seeds = grid["seeds"].get<std::vector<std::uint64_t>>();

  // Prepare all run configs up front so config errors surface before any run.
  struct Job {
    std::size_t cell;
    std::uint64_t seed;
    std::string config_path;
    std::string run_dir;
  };
  std::vector<Job> jobs;
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    for (std::uint64_t seed : seeds) {
      json merged = grid["base"];
      for (auto it = cells[ci].overrides.begin(); it != cells[ci].overrides.end(); ++it)
        merged[it.key()] = it.value();
      const std::string run_dir =
          out_root + "/" + cells[ci].name + "/seed_" + std::to_string(seed);
      merged["out_dir"] = run_dir;
      merged["train_seed"] = seed;
      sckan::RunConfig cfg = sckan::RunConfig::from_json(merged);  // throws ConfigError
      fs::create_directories(run_dir);
      const std::string config_path = run_dir + "/config.json";
      cfg.save(config_path);
      jobs.push_back({ci, seed, config_path, run_dir});
    }
  }

  std::vector<CellOutcome> outcomes(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) outcomes[i].name = cells[i].name;

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  const int workers = std::min<int>(grid_parallelism(), static_cast<int>(jobs.size()));
  auto worker = [&] {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const Job& job = jobs[j];
      std::string error;
      const bool ok = run_cell_process(self_path, job.config_path, error);
      std::lock_guard<std::mutex> lock(mu);
      if (!ok) {
        outcomes[job.cell].failures.push_back("seed " + std::to_string(job.seed) + ": " + error);
        std::printf("[ablate] %s seed %llu FAILED: %s\n", cells[job.cell].name.c_str(),
                    static_cast<unsigned long long>(job.seed), error.c_str());
        continue;
      }
      std::ifstream mf(job.run_dir + "/metrics.json");
      if (!mf) {
        outcomes[job.cell].failures.push_back("seed " + std::to_string(job.seed) +
                                              ": missing metrics.json");
        continue;
      }
      outcomes[job.cell].run_metrics.push_back(json::parse(mf));
      std::printf("[ablate] %s seed %llu done\n", cells[job.cell].name.c_str(),
                  static_cast<unsigned long long>(job.seed));
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  // Aggregate: mean +- std across seeds per cell.
  auto collect = [](const std::vector<json>& runs, const char* a, const char* b,
                    const char* c = nullptr) {
    std::vector<double> xs;
    for (const auto& r : runs) {
      const json* v = &r.at(a);
      v = &v->at(b);
      if (c) v = &v->at(c);
      xs.push_back(v->get<double>());
    }
    return sckan::mean_std(xs);
  };

  std::ofstream csv(out_root + "/ablation.csv", std::ios::trunc);
  std::ofstream md(out_root + "/ablation.md", std::ios::trunc);
  csv << "cell,runs,failures,dice_mean,dice_std,jaccard_mean,jaccard_std,hd95_mean,hd95_std,"
         "asd_mean,asd_std,l_dice_mean,l_dice_std,u_dice_mean,u_dice_std,lu_gap_mean,lu_gap_std\n";
  md << "| cell | dice | jaccard | hd95 | asd | L-Dice | U-Dice | L-U gap |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& oc : outcomes) {
    const auto dice = collect(oc.run_metrics, "test", "dice", "mean");
    const auto jac = collect(oc.run_metrics, "test", "jaccard", "mean");
    const auto hd = collect(oc.run_metrics, "test", "hd95", "mean");
    const auto asd = collect(oc.run_metrics, "test", "asd", "mean");
    const auto ld = collect(oc.run_metrics, "gap", "labeled_dice");
    const auto ud = collect(oc.run_metrics, "gap", "unlabeled_dice");
    const auto gap = collect(oc.run_metrics, "gap", "lu_gap");
    csv << oc.name << ',' << oc.run_metrics.size() << ',' << oc.failures.size() << ','
        << sckan::format_double(dice.mean) << ',' << sckan::format_double(dice.stddev) << ','
        << sckan::format_double(jac.mean) << ',' << sckan::format_double(jac.stddev) << ','
        << sckan::format_double(hd.mean) << ',' << sckan::format_double(hd.stddev) << ','
        << sckan::format_double(asd.mean) << ',' << sckan::format_double(asd.stddev) << ','
        << sckan::format_double(ld.mean) << ',' << sckan::format_double(ld.stddev) << ','
        << sckan::format_double(ud.mean) << ',' << sckan::format_double(ud.stddev) << ','
        << sckan::format_double(gap.mean) << ',' << sckan::format_double(gap.stddev) << '\n';
    char row[512];
    std::snprintf(row, sizeof(row),
                  "| %s | %.4f±%.4f | %.4f±%.4f | %.2f±%.2f | %.2f±%.2f | %.4f | %.4f | %.4f |\n",
                  oc.name.c_str(), dice.mean, dice.stddev, jac.mean, jac.stddev, hd.mean,
                  hd.stddev, asd.mean, asd.stddev, ld.mean, ud.mean, gap.mean);
    md << row;
    for (const auto& f : oc.failures) md << "<!-- " << oc.name << " " << f << " -->\n";
  }
  std::printf("ablation table written to %s/ablation.csv and %s/ablation.md\n", out_root.c_str(),
              out_root.c_str());
  return kExitOk;
}

std::string self_executable() {
  std::error_code ec;
  auto p = fs::read_symlink("/proc/self/exe", ec);
  if (!ec) return p.string();
  return "sckan";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SCKAN: structural-consensus prototype learning with KAN fusion"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom corpus");
  std::uint64_t gen_seed = 7;
  int gen_count = 20;
  int gen_shape = 48;
  std::string gen_out = "data";
  double labeled_frac = 0.10, test_frac = 0.15;
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--count", gen_count, "number of phantoms")->check(CLI::PositiveNumber);
  gen->add_option("--shape", gen_shape, "cubic volume edge length")->check(CLI::Range(16, 256));
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--labeled-frac", labeled_frac, "labeled fraction");
  gen->add_option("--test-frac", test_frac, "test fraction");

  auto* train = app.add_subcommand("train", "run a training configuration");
  std::string train_config;
  train->add_option("--config", train_config, "run config JSON")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus role");
  std::string eval_ckpt, eval_data, eval_role = "test", eval_out = "eval_out";
  int eval_tap = 2;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "corpus directory")->required();
  eval->add_option("--role", eval_role, "labeled|unlabeled|test");
  eval->add_option("--out", eval_out, "output directory");
  eval->add_option("--tap-level", eval_tap, "feature tap level used in training");

  auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
  std::string grid_path;
  ablate->add_option("--grid", grid_path, "grid JSON")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification suites");
  std::string gc_module = "all";
  int gc_seeds = 20;
  gc->add_option("--module", gc_module, "all|kan|pcc|ckaf|trainer");
  gc->add_option("--seeds", gc_seeds, "random seeds per op")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(gen_seed, gen_count, gen_shape, gen_out, labeled_frac, test_frac);
    if (*train) return cmd_train(train_config);
    if (*eval) return cmd_eval(eval_ckpt, eval_data, eval_role, eval_out, eval_tap);
    if (*ablate) return cmd_ablate(grid_path, self_executable());
    if (*gc) return cmd_gradcheck(gc_module, gc_seeds);
  } catch (const sckan::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const sckan::NonFiniteLoss& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const sckan::GenerationFailed& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kExitOk;
}
