#include "flowctl/runconfig.hpp"

#include "flowctl/checkpoint.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace flowctl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

// Drops the wall_ms column (physical time is the one non-deterministic field
// in the CSV outputs); the column is located from the header.
std::string strip_wall(const std::string& csv) {
  std::stringstream in(csv);
  std::string line, out;
  long wall_col = -1;
  bool first = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells = split_csv_line(line);
    if (first) {
      for (size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == "wall_ms") wall_col = static_cast<long>(i);
      }
      first = false;
    }
    std::string kept;
    for (size_t i = 0; i < cells.size(); ++i) {
      if (static_cast<long>(i) == wall_col) continue;
      if (!kept.empty()) kept += ',';
      kept += cells[i];
    }
    out += kept + "\n";
  }
  return out;
}

fs::path make_tiny_config(const fs::path& dir, const std::string& out_name) {
  nlohmann::json cfg{
      {"seed", 5},
      {"out", (dir / out_name).string()},
      {"data", {{"utterances", 16}, {"holdout", 4}, {"min_tokens", 3}, {"max_tokens", 5}}},
      {"model", {{"D", 16}, {"B", 2}, {"mlp_ratio", 2}}},
      {"train", {{"steps", 6}, {"batch_frames", 64}, {"log_every", 2}}},
      {"ctrl", {{"t_emo", 0.5}, {"window", 2}}},
      {"schedule", {{"nfe", 4}}},
      {"eval", {{"cases_per_pair", 1}, {"tokens_per_half", 4}, {"scan_cases", 2}, {"flow_samples", 1}, {"flow_draws", 4}}},
      {"paths",
       {{"dataset", (dir / out_name / "train.fcds").string()},
        {"holdout", (dir / out_name / "holdout.fcds").string()},
        {"base", (dir / out_name / "base.fccp").string()},
        {"ctrl", (dir / out_name / "ctrl.fccp").string()}}},
  };
  fs::path p = dir / (out_name + "_config.json");
  std::ofstream f(p);
  f << cfg.dump(2);
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("parse_config") {
  SUBCASE("empty file gives all defaults") {
    fs::path dir = fs::temp_directory_path() / "flowctl_cli_cfg";
    fs::create_directories(dir);
    for (const char* body : {"", "{}", "  \n"}) {
      fs::path p = dir / "empty.json";
      std::ofstream(p) << body;
      RunConfig cfg = parse_config(p.string(), {});
      CHECK(cfg.values == default_config_json());
      for (const auto& [key, src] : cfg.provenance) CHECK(src == "default");
    }
  }
  SUBCASE("no file gives all defaults") {
    RunConfig cfg = parse_config("", {});
    CHECK(cfg.values == default_config_json());
  }
  SUBCASE("flag overrides file value") {
    fs::path dir = fs::temp_directory_path() / "flowctl_cli_cfg";
    fs::create_directories(dir);
    fs::path p = dir / "lr.json";
    std::ofstream(p) << R"({"train": {"learning_rate": 0.01, "steps": 7}})";
    RunConfig cfg = parse_config(p.string(), {{"train.learning_rate", 0.5}});
    CHECK(cfg.values["train"]["learning_rate"].get<double>() == 0.5);
    CHECK(cfg.values["train"]["steps"].get<int>() == 7);
    CHECK(cfg.provenance.at("train.learning_rate") == "flag");
    CHECK(cfg.provenance.at("train.steps") == "file");
    CHECK(cfg.provenance.at("train.batch_frames") == "default");
  }
  SUBCASE("unknown keys are named") {
    fs::path dir = fs::temp_directory_path() / "flowctl_cli_cfg";
    fs::create_directories(dir);
    fs::path p = dir / "unknown.json";
    std::ofstream(p) << R"({"train": {"learning_rte": 0.01}})";
    try {
      parse_config(p.string(), {});
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("train.learning_rte") != std::string::npos);
    }
  }
  SUBCASE("constraint violations name the key") {
    try {
      parse_config("", {{"ctrl.t_emo", 1.5}});
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("t_emo") != std::string::npos);
    }
  }
  SUBCASE("type mismatches are rejected") {
    fs::path dir = fs::temp_directory_path() / "flowctl_cli_cfg";
    fs::create_directories(dir);
    fs::path p = dir / "type.json";
    std::ofstream(p) << R"({"train": {"steps": "many"}})";
    CHECK_THROWS_AS(parse_config(p.string(), {}), ConfigError);
  }
}

TEST_CASE("unknown command exits 2") {
  CHECK(run_cli({"frobnicate"}) == 2);
  CHECK(run_cli({"pretrain", "--no-such-flag"}) == 2);
}

TEST_CASE("config errors exit 2, runtime errors exit 1") {
  CHECK(run_cli({"pretrain", "--t-emo", "7"}) == 2);
  fs::path dir = fs::temp_directory_path() / "flowctl_cli_rt";
  fs::create_directories(dir);
  // Missing dataset file is a runtime failure.
  CHECK(run_cli({"pretrain", "--dataset", (dir / "absent.fcds").string(),
                 "--out", (dir / "o").string()}) == 1);
}

TEST_CASE("miniature pipeline end to end, rerun byte-identical") {
  fs::path dir = fs::temp_directory_path() / "flowctl_cli_pipe";
  fs::remove_all(dir);
  fs::create_directories(dir);

  auto run_pipeline = [&](const std::string& name) {
    fs::path cfg = make_tiny_config(dir, name);
    REQUIRE(run_cli({"gen-data", "--config", cfg.string()}) == 0);
    REQUIRE(run_cli({"pretrain", "--config", cfg.string()}) == 0);
    REQUIRE(run_cli({"train-ctrlnet", "--config", cfg.string()}) == 0);
    REQUIRE(run_cli({"eval", "--config", cfg.string()}) == 0);
    REQUIRE(run_cli({"scan-blocks", "--config", cfg.string()}) == 0);
    REQUIRE(run_cli({"flowstep", "--config", cfg.string()}) == 0);
    REQUIRE(run_cli({"sweep-scale", "--config", cfg.string()}) == 0);
    REQUIRE(run_cli({"synth", "--config", cfg.string()}) == 0);
  };
  run_pipeline("a");
  run_pipeline("b");

  for (const char* f : {"train.fcds", "holdout.fcds", "base.fccp", "ctrl.fccp", "synth.fcds"}) {
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
  for (const char* f : {"eval.csv", "scan.csv", "flowstep.csv", "sweep.csv", "synth.csv"}) {
    CHECK(strip_wall(slurp(dir / "a" / f)) == strip_wall(slurp(dir / "b" / f)));
  }
  for (const char* f : {"pretrain_log.csv", "ctrlnet_log.csv"}) {
    CHECK(strip_wall(slurp(dir / "a" / f)) == strip_wall(slurp(dir / "b" / f)));
  }

  // The manifest records command, provenance and versions.
  nlohmann::json manifest = nlohmann::json::parse(slurp(dir / "a" / "run.json"));
  CHECK(manifest["command"] == "synth");
  CHECK(manifest["versions"]["checkpoint_format"] == "FCCP1");
  CHECK(manifest["provenance"]["train.steps"] == "file");

  // Outputs exist and inputs were not mutated: rerunning eval alone leaves
  // the checkpoints untouched.
  std::string base_before = slurp(dir / "a" / "base.fccp");
  fs::path cfg = dir / "a_config.json";
  REQUIRE(run_cli({"eval", "--config", cfg.string()}) == 0);
  CHECK(slurp(dir / "a" / "base.fccp") == base_before);
}

TEST_SUITE_END();
