#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cloudalloc/cli.hpp"

using namespace cloudalloc;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> errors_of(const nlohmann::json& doc) {
  try {
    validate_config(doc);
  } catch (const ConfigError& e) {
    return e.errors();
  }
  return {};
}

bool mentions(const std::vector<std::string>& errors, const std::string& needle) {
  for (const auto& e : errors)
    if (e.find(needle) != std::string::npos) return true;
  return false;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Invocation {
  int code;
  std::string out, err;
};

Invocation invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_config(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

const char* kTinyConfig = R"({
  "trace": {"workload": {"duration_ticks": 576}},
  "forecast": {"layer_sizes": [4], "dense_sizes": [], "window_len": 6, "horizon": 2, "dropout_rate": 0.0,
               "target": "request_rate", "window_stride": 16, "train": {"epochs": 1, "initial_lr": 0.05}},
  "agent": {"total_steps": 300, "learning_starts": 50, "batch_size": 16, "hidden": [8], "grid_step": 0.5,
            "grid_search_steps": 60},
  "objective": {"weights": "tune", "pso": {"swarm_size": 3, "iterations": 2}}
})";

}  // namespace

TEST(ValidateConfig, EmptyDocumentGivesDefaults) {
  const auto c = validate_config(nlohmann::json::object());
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.train_ratio, 0.8);
  EXPECT_EQ(c.constraints.cpu_max, 0.85);
  EXPECT_EQ(c.cluster.max_vms(), 160u);
  EXPECT_EQ(c.forecast.arch.layer_sizes, (std::vector<std::size_t>{128, 256, 128}));
  EXPECT_FALSE(c.objective.tune);
}

TEST(ValidateConfig, DropoutOutOfRangeNamesField) {
  const auto errs = errors_of({{"forecast", {{"dropout_rate", 1.5}}}});
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_NE(errs[0].find("forecast.dropout_rate"), std::string::npos);
}

TEST(ValidateConfig, ReportsEveryError) {
  const auto errs = errors_of({{"forecast", {{"dropout_rate", 1.5}}}, {"constraints", {{"cpu_max", -0.1}}}});
  EXPECT_EQ(errs.size(), 2u);
  EXPECT_TRUE(mentions(errs, "forecast.dropout_rate"));
  EXPECT_TRUE(mentions(errs, "constraints.cpu_max"));
}

TEST(ValidateConfig, UnknownKeysAndWrongTypes) {
  const auto errs = errors_of({{"agnet", 1},
                               {"agent", {{"gamma", "high"}, {"hidden", {64, 0}}}},
                               {"objective", {{"weights", {1, 2}}}},
                               {"trace", {{"input", "/no/such/trace.csv"}}}});
  EXPECT_TRUE(mentions(errs, "agnet: unknown field"));
  EXPECT_TRUE(mentions(errs, "agent.gamma"));
  EXPECT_TRUE(mentions(errs, "agent.hidden"));
  EXPECT_TRUE(mentions(errs, "objective.weights"));
  EXPECT_TRUE(mentions(errs, "/no/such/trace.csv"));
  EXPECT_EQ(errs.size(), 5u);
}

TEST(ValidateConfig, ClusterCapacityChecked) {
  const auto errs = errors_of({{"cluster", {{"n_nodes", 1}, {"initial_vms", 100}}}});
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_NE(errs[0].find("initial_vms"), std::string::npos);
}

TEST(ValidateConfig, ObjectiveWeightsProjected) {
  const auto c = validate_config({{"objective", {{"weights", {2, 1, 1}}}}});
  EXPECT_DOUBLE_EQ(c.objective.weights.w1(), 0.5);
  EXPECT_TRUE(validate_config({{"objective", {{"weights", "tune"}}}}).objective.tune);
}

TEST(Cli, HelpAndUsageErrors) {
  const auto help = invoke({"simulate", "--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("--policy"), std::string::npos);
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"frobnicate"}).code, 1);
  EXPECT_EQ(invoke({"simulate", "--policy", "random"}).code, 1);
}

TEST(Cli, GenWritesTrace) {
  TempDir dir("cloudalloc_cli_gen");
  const auto r = invoke({"gen", "--out", dir.path.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto frame = ingest_csv((dir.path / "trace.csv").string());
  EXPECT_EQ(frame.size(), 8640u);
  EXPECT_EQ(frame.names.size(), kFeatureCount);
}

TEST(Cli, MissingTraceIsValidationError) {
  TempDir dir("cloudalloc_cli_missing");
  const auto missing = (dir.path / "absent.csv").string();
  const auto r = invoke({"simulate", "--policy", "static", "--out", dir.path.string(), "--trace", missing});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(missing), std::string::npos);
}

TEST(Cli, InvalidConfigExitsOneWithFieldPath) {
  TempDir dir("cloudalloc_cli_badcfg");
  write_config(dir.path / "bad.json", R"({"forecast": {"dropout_rate": 1.5}})");
  const auto r = invoke({"gen", "--config", (dir.path / "bad.json").string(), "--out", dir.path.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("forecast.dropout_rate"), std::string::npos);
}

TEST(Cli, CorruptCheckpointIsReported) {
  TempDir dir("cloudalloc_cli_corrupt");
  ASSERT_EQ(invoke({"gen", "--out", dir.path.string()}).code, 0);
  std::ofstream(dir.path / "agent.json") << "{ not json";
  const auto r = invoke({"simulate", "--out", dir.path.string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("agent.json"), std::string::npos);
}

TEST(Cli, FullPipelineIsDeterministic) {
  TempDir dir("cloudalloc_cli_pipeline");
  write_config(dir.path / "tiny.json", kTinyConfig);
  const std::string cfg = (dir.path / "tiny.json").string();
  auto pipeline = [&](const std::string& out, const std::string& seed) {
    const std::vector<std::vector<std::string>> stages = {{"gen"},
                                                          {"prep"},
                                                          {"train-forecast"},
                                                          {"train-agent", "--grid-search"},
                                                          {"tune-weights"},
                                                          {"simulate", "--policy", "dqn"},
                                                          {"simulate", "--policy", "static"},
                                                          {"simulate", "--policy", "objective"},
                                                          {"evaluate", "--policy", "dqn"},
                                                          {"evaluate", "--policy", "static"},
                                                          {"compare"}};
    for (auto args : stages) {
      args.insert(args.end(), {"--config", cfg, "--out", out, "--seed", seed});
      const auto r = invoke(args);
      ASSERT_EQ(r.code, 0) << args[0] << ": " << r.err;
    }
  };
  const auto a = (dir.path / "a").string(), b = (dir.path / "b").string(), c = (dir.path / "c").string();
  pipeline(a, "7");
  pipeline(b, "7");
  pipeline(c, "8");
  for (const char* f : {"trace.csv", "forecast_model.json", "agent.json", "reward_grid.csv", "tuning_log.csv",
                        "episode_objective.csv", "report_dqn.json", "comparison.json"}) {
    ASSERT_TRUE(fs::exists(fs::path(a) / f)) << f;
    EXPECT_EQ(slurp(fs::path(a) / f), slurp(fs::path(b) / f)) << f;
  }
  EXPECT_NE(slurp(fs::path(a) / "agent_log.csv"), slurp(fs::path(c) / "agent_log.csv"));

  std::size_t grid_rows = 0;
  std::ifstream grid(fs::path(a) / "reward_grid.csv");
  for (std::string line; std::getline(grid, line);) ++grid_rows;
  EXPECT_EQ(grid_rows, 1u + 6u);  // header plus the step-0.5 simplex

  const auto cmp = nlohmann::json::parse(slurp(fs::path(a) / "comparison.json"));
  EXPECT_EQ(cmp.at("baseline"), "static");
  EXPECT_EQ(cmp.at("candidate"), "dqn");
  EXPECT_EQ(cmp.at("metrics").size(), 5u);
  const auto report = read_report(fs::path(a) / "report_static.json");
  EXPECT_EQ(report.ticks, 576u - static_cast<std::size_t>(0.8 * 576));
}
