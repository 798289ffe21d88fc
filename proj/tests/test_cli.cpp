#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sckan/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_path() {
  const char* p = std::getenv("SCKAN_CLI");
  REQUIRE(p != nullptr);
  return p;
}

int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd = "\"" + cli_path() + "\" " + args + " > \"" + log + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("sckan_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json small_config(const std::string& data_dir, const std::string& out_dir) {
  return json{{"schema_version", 1}, {"data_dir", data_dir},   {"out_dir", out_dir},
              {"steps", 12},         {"crop_size", 8},          {"labeled_per_batch", 2},
              {"unlabeled_per_batch", 2}, {"prototype_k", 2},   {"train_seed", 5}};
}

}  // namespace

TEST_CASE("gen-data is deterministic and writes the expected corpus") {
  auto dir = fresh_dir("gen");
  const std::string a = (dir / "a").string();
  const std::string b = (dir / "b").string();
  REQUIRE(run_cli("gen-data --seed 7 --count 8 --shape 16 --out " + a, (dir / "a.log").string()) == 0);
  REQUIRE(run_cli("gen-data --seed 7 --count 8 --shape 16 --out " + b, (dir / "b.log").string()) == 0);

  int volume_files = 0;
  for (auto& e : fs::directory_iterator(a))
    if (e.path().extension() == ".sckv") ++volume_files;
  CHECK(volume_files == 16);  // volume + mask per phantom

  for (int i = 0; i < 8; ++i) {
    char volf[32], maskf[32];
    std::snprintf(volf, sizeof(volf), "vol_%04d.sckv", i);
    std::snprintf(maskf, sizeof(maskf), "mask_%04d.sckv", i);
    REQUIRE(slurp(a + "/" + volf) == slurp(b + "/" + volf));
    REQUIRE(slurp(a + "/" + maskf) == slurp(b + "/" + maskf));
  }
  REQUIRE(slurp(a + "/manifest.json") == slurp(b + "/manifest.json"));

  // manifest roles partition all ids
  auto manifest = sckan::read_manifest(a + "/manifest.json");
  CHECK(manifest.roles.size() == 8);
  CHECK(manifest.ids_with(sckan::Role::kLabeled).size() +
            manifest.ids_with(sckan::Role::kUnlabeled).size() +
            manifest.ids_with(sckan::Role::kTest).size() ==
        8);
}

TEST_CASE("train runs, writes artifacts, and reruns byte-identically") {
  auto dir = fresh_dir("train");
  const std::string data = (dir / "data").string();
  REQUIRE(run_cli("gen-data --seed 3 --count 6 --shape 16 --out " + data,
                  (dir / "gen.log").string()) == 0);

  const std::string out1 = (dir / "run1").string();
  json cfg = small_config(data, out1);
  {
    std::ofstream f(dir / "cfg1.json");
    f << cfg.dump(2);
  }
  REQUIRE(run_cli("train --config " + (dir / "cfg1.json").string(), (dir / "t1.log").string()) == 0);
  CHECK(fs::exists(out1 + "/config.json"));
  CHECK(fs::exists(out1 + "/train_log.jsonl"));
  CHECK(fs::exists(out1 + "/metrics.json"));
  CHECK(fs::exists(out1 + "/checkpoint.sckp"));

  const std::string out2 = (dir / "run2").string();
  cfg["out_dir"] = out2;
  {
    std::ofstream f(dir / "cfg2.json");
    f << cfg.dump(2);
  }
  REQUIRE(run_cli("train --config " + (dir / "cfg2.json").string(), (dir / "t2.log").string()) == 0);
  REQUIRE(slurp(out1 + "/train_log.jsonl") == slurp(out2 + "/train_log.jsonl"));
  REQUIRE(slurp(out1 + "/metrics.json") == slurp(out2 + "/metrics.json"));

  // eval on the stored checkpoint
  const std::string ev = (dir / "eval").string();
  REQUIRE(run_cli("eval --checkpoint " + out1 + "/checkpoint.sckp --data " + data + " --out " + ev,
                  (dir / "e.log").string()) == 0);
  CHECK(fs::exists(ev + "/cases.csv"));
  CHECK(fs::exists(ev + "/summary.json"));
}

TEST_CASE("config errors exit with code 2 and name the field") {
  auto dir = fresh_dir("cfgerr");
  {
    std::ofstream f(dir / "bad.json");
    f << R"({"schema_version":1,"data_dir":"x","out_dir":"y","mystery_knob":3})";
  }
  const std::string log = (dir / "bad.log").string();
  CHECK(run_cli("train --config " + (dir / "bad.json").string(), log) == 2);
  CHECK(slurp(log).find("mystery_knob") != std::string::npos);

  {
    std::ofstream f(dir / "bad2.json");
    f << R"({"schema_version":1,"data_dir":"x","out_dir":"y","lr":-1})";
  }
  const std::string log2 = (dir / "bad2.log").string();
  CHECK(run_cli("train --config " + (dir / "bad2.json").string(), log2) == 2);
  CHECK(slurp(log2).find("lr") != std::string::npos);

  // usage error: missing required option
  CHECK(run_cli("train", (dir / "usage.log").string()) == 2);
}

TEST_CASE("ablate: empty grid exits 2, tiny grid emits the report") {
  auto dir = fresh_dir("ablate");
  {
    std::ofstream f(dir / "empty.json");
    f << R"({"base":{},"cells":[],"seeds":[1],"out_dir":"x"})";
  }
  CHECK(run_cli("ablate --grid " + (dir / "empty.json").string(), (dir / "empty.log").string()) == 2);

  const std::string data = (dir / "data").string();
  REQUIRE(run_cli("gen-data --seed 4 --count 6 --shape 16 --out " + data,
                  (dir / "gen.log").string()) == 0);
  json base = small_config(data, "ignored");
  base.erase("out_dir");
  json grid = {{"base", base},
               {"out_dir", (dir / "grid").string()},
               {"seeds", {1, 2}},
               {"cells",
                {{{"name", "mt"},
                  {"overrides", {{"use_ssd", false}, {"use_pcc", false}, {"use_ckaf", false}}}},
                 {{"name", "full"}, {"overrides", json::object()}}}}};
  {
    std::ofstream f(dir / "grid.json");
    f << grid.dump(2);
  }
  REQUIRE(run_cli("ablate --grid " + (dir / "grid.json").string(), (dir / "grid.log").string()) == 0);
  const std::string csv = slurp((dir / "grid" / "ablation.csv").string());
  CHECK(csv.find("cell,runs,failures,dice_mean") == 0);
  CHECK(csv.find("\nmt,2,0,") != std::string::npos);
  CHECK(csv.find("\nfull,2,0,") != std::string::npos);
  CHECK(fs::exists(dir / "grid" / "ablation.md"));
  CHECK(fs::exists(dir / "grid" / "mt" / "seed_1" / "metrics.json"));
  CHECK(fs::exists(dir / "grid" / "full" / "seed_2" / "metrics.json"));
}

TEST_CASE("gradcheck subcommand exits clean on a small module") {
  auto dir = fresh_dir("gc");
  const std::string log = (dir / "gc.log").string();
  CHECK(run_cli("gradcheck --module kan --seeds 3", log) == 0);
  CHECK(slurp(log).find("kan_linear") != std::string::npos);
  CHECK(slurp(log).find("PASS") != std::string::npos);
  CHECK(run_cli("gradcheck --module bogus --seeds 1", (dir / "gc2.log").string()) != 0);
}
