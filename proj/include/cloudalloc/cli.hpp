#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cloudalloc/pipeline.hpp"

namespace cloudalloc {

namespace fs = std::filesystem;

struct ForecastSettings {
  ForecastArchitecture arch;
  std::size_t window_len = kDefaultWindowLen;
  std::string target = "request_rate";
  std::size_t window_stride = 1;
  TrainConfig train;
};

struct AgentSettings {
  AgentConfig config;
  RewardModel reward;
  ClusterEnvOptions env;
  double grid_step = 0.1;
  std::size_t grid_search_steps = 2000;
};

struct ObjectiveSettings {
  bool tune = false;
  ObjectiveWeights weights;
  PsoConfig pso;
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::string output_dir = "out";
  std::optional<std::string> trace_input;
  WorkloadSpec workload;
  PreprocessOptions preprocessing;
  double train_ratio = 0.8;
  ForecastSettings forecast;
  ClusterConfig cluster;
  ConstraintSet constraints;
  AgentSettings agent;
  ObjectiveSettings objective;
  CostRates costs;
};

// Every problem found in a configuration document, each prefixed by its field path.
class ConfigError : public ValidationError {
 public:
  explicit ConfigError(std::vector<std::string> errors) : ValidationError(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& e) {
    std::string s = "invalid configuration:";
    for (const auto& x : e) s += "\n  " + x;
    return s;
  }
  std::vector<std::string> errors_;
};

namespace detail {

using nlohmann::json;

class ConfigReader {
 public:
  std::vector<std::string> errors;

  static std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

  void fail(const std::string& path, const std::string& msg) { errors.push_back(path + ": " + msg); }

  // Returns the sub-object or nullptr (absent or wrong type, the latter reported).
  const json* section(const json* parent, const std::string& path, const char* key,
                      std::initializer_list<const char*> known_keys) {
    if (!parent || !parent->contains(key)) return nullptr;
    const json& v = (*parent)[key];
    const auto p = join(path, key);
    if (!v.is_object()) {
      fail(p, "expected an object");
      return nullptr;
    }
    known(v, p, known_keys);
    return &v;
  }

  void known(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      bool ok = false;
      for (const char* k : keys) ok = ok || it.key() == k;
      if (!ok) fail(join(path, it.key()), "unknown field");
    }
  }

  void number(const json* obj, const std::string& path, const char* key, double& out, double lo, double hi,
              bool lo_open = false, bool hi_open = false) {
    if (!obj || !obj->contains(key)) return;
    const json& v = (*obj)[key];
    const auto p = join(path, key);
    if (!v.is_number()) return fail(p, "expected a number");
    const double x = v.get<double>();
    const bool below = lo_open ? !(x > lo) : !(x >= lo);
    const bool above = hi_open ? !(x < hi) : !(x <= hi);
    if (below || above)
      return fail(p, "must lie in " + std::string(lo_open ? "(" : "[") + format_double(lo) + ", " +
                         (hi == std::numeric_limits<double>::infinity() ? std::string("inf") : format_double(hi)) +
                         (hi_open ? ")" : "]") + ", got " + format_double(x));
    out = x;
  }

  template <typename Int>
  void integer(const json* obj, const std::string& path, const char* key, Int& out, long long lo,
               long long hi = std::numeric_limits<long long>::max()) {
    if (!obj || !obj->contains(key)) return;
    const json& v = (*obj)[key];
    const auto p = join(path, key);
    if (!v.is_number_integer()) return fail(p, "expected an integer");
    if (v.is_number_unsigned() && v.get<unsigned long long>() > static_cast<unsigned long long>(hi))
      return fail(p, "must be at most " + std::to_string(hi));
    if (!v.is_number_unsigned()) {
      const long long x = v.get<long long>();
      if (x < lo || x > hi) return fail(p, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " + std::to_string(x));
    }
    out = v.get<Int>();
  }

  void seed(const json* obj, const std::string& path, const char* key, std::uint64_t& out) {
    if (!obj || !obj->contains(key)) return;
    const json& v = (*obj)[key];
    if (!v.is_number_unsigned()) return fail(join(path, key), "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }

  void text(const json* obj, const std::string& path, const char* key, std::string& out) {
    if (!obj || !obj->contains(key)) return;
    const json& v = (*obj)[key];
    if (!v.is_string()) return fail(join(path, key), "expected a string");
    out = v.get<std::string>();
  }

  void flag(const json* obj, const std::string& path, const char* key, bool& out) {
    if (!obj || !obj->contains(key)) return;
    const json& v = (*obj)[key];
    if (!v.is_boolean()) return fail(join(path, key), "expected true or false");
    out = v.get<bool>();
  }

  void sizes(const json* obj, const std::string& path, const char* key, std::vector<std::size_t>& out, bool allow_empty) {
    if (!obj || !obj->contains(key)) return;
    const json& v = (*obj)[key];
    const auto p = join(path, key);
    if (!v.is_array()) return fail(p, "expected an array of positive integers");
    std::vector<std::size_t> r;
    for (const auto& e : v) {
      if (!e.is_number_unsigned() || e.get<std::size_t>() == 0) return fail(p, "expected an array of positive integers");
      r.push_back(e.get<std::size_t>());
    }
    if (r.empty() && !allow_empty) return fail(p, "must not be empty");
    out = std::move(r);
  }

  void hours(const json* obj, const std::string& path, const char* key, std::vector<int>& out) {
    if (!obj || !obj->contains(key)) return;
    const json& v = (*obj)[key];
    const auto p = join(path, key);
    std::vector<int> r;
    if (v.is_array())
      for (const auto& e : v) {
        if (!e.is_number_integer() || e.get<int>() < 0 || e.get<int>() > 23) return fail(p, "hours must be integers in [0, 23]");
        r.push_back(e.get<int>());
      }
    else
      return fail(p, "expected an array of hours");
    if (r.empty()) return fail(p, "must not be empty");
    out = std::move(r);
  }

  std::optional<std::array<double, 3>> triple(const json& v, const std::string& p) {
    if (!v.is_array() || v.size() != 3) {
      fail(p, "expected three weights");
      return std::nullopt;
    }
    std::array<double, 3> w{};
    for (std::size_t i = 0; i < 3; ++i) {
      if (!v[i].is_number() || v[i].get<double>() < 0.0) {
        fail(p, "weights must be non-negative numbers");
        return std::nullopt;
      }
      w[i] = v[i].get<double>();
    }
    if (!(w[0] + w[1] + w[2] > 0.0)) {
      fail(p, "weights must not all be zero");
      return std::nullopt;
    }
    return w;
  }
};

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace detail

inline RunConfig validate_config(const nlohmann::json& doc) {
  using detail::kInf;
  if (!doc.is_object() && !doc.is_null()) throw ConfigError({"<root>: expected a JSON object"});
  const nlohmann::json empty = nlohmann::json::object();
  const nlohmann::json* root = doc.is_null() ? &empty : &doc;
  detail::ConfigReader r;
  RunConfig c;
  r.known(*root, "", {"seed", "output_dir", "trace", "preprocessing", "split", "forecast", "cluster", "constraints", "agent",
                      "objective", "costs"});
  r.seed(root, "", "seed", c.seed);
  r.text(root, "", "output_dir", c.output_dir);

  if (const auto* t = r.section(root, "", "trace", {"input", "workload"})) {
    if (t->contains("input")) {
      std::string in;
      r.text(t, "trace", "input", in);
      if (!in.empty()) {
        if (!fs::exists(in))
          r.fail("trace.input", "file '" + in + "' does not exist");
        else
          c.trace_input = in;
      }
    }
    if (const auto* w = r.section(t, "trace", "workload",
                                  {"duration_ticks", "base_level", "daily_amplitude", "peak_hours", "peak_width_hours",
                                   "noise_sigma", "burst_probability", "burst_magnitude", "tick_interval", "start_time"})) {
      const std::string p = "trace.workload";
      auto& s = c.workload;
      r.integer(w, p, "duration_ticks", s.duration_ticks, 1);
      r.number(w, p, "base_level", s.base_level, 0, 1);
      r.number(w, p, "daily_amplitude", s.daily_amplitude, 0, 1);
      r.hours(w, p, "peak_hours", s.peak_hours);
      r.number(w, p, "peak_width_hours", s.peak_width_hours, 0, 24, true);
      r.number(w, p, "noise_sigma", s.noise_sigma, 0, 1);
      r.number(w, p, "burst_probability", s.burst_probability, 0, 1);
      r.number(w, p, "burst_magnitude", s.burst_magnitude, 0, 1);
      r.integer(w, p, "tick_interval", s.tick_interval, 1, 86400);
      if (86400 % s.tick_interval != 0) r.fail(p + ".tick_interval", "must divide one day (86400 s)");
      r.integer(w, p, "start_time", s.start_time, std::numeric_limits<long long>::min());
    }
  }

  if (const auto* p = r.section(root, "", "preprocessing", {"interval", "alpha"})) {
    r.integer(p, "preprocessing", "interval", c.preprocessing.interval, 1);
    r.number(p, "preprocessing", "alpha", c.preprocessing.alpha, 0, 1, true);
  }
  if (const auto* s = r.section(root, "", "split", {"train_ratio"})) r.number(s, "split", "train_ratio", c.train_ratio, 0, 1, true, true);

  if (const auto* f = r.section(root, "", "forecast",
                                {"layer_sizes", "dense_sizes", "window_len", "horizon", "dropout_rate", "target",
                                 "window_stride", "train"})) {
    auto& fc = c.forecast;
    r.sizes(f, "forecast", "layer_sizes", fc.arch.layer_sizes, false);
    r.sizes(f, "forecast", "dense_sizes", fc.arch.dense_sizes, true);
    r.integer(f, "forecast", "window_len", fc.window_len, 1);
    r.integer(f, "forecast", "horizon", fc.arch.horizon, 1);
    r.number(f, "forecast", "dropout_rate", fc.arch.dropout_rate, 0, 1, false, true);
    r.text(f, "forecast", "target", fc.target);
    if (!canonical_feature_index(fc.target)) r.fail("forecast.target", "unknown metric '" + fc.target + "'");
    r.integer(f, "forecast", "window_stride", fc.window_stride, 1);
    if (const auto* t = r.section(f, "forecast", "train",
                                  {"epochs", "initial_lr", "lr_min", "batch_size", "gradient_clip", "momentum"})) {
      const std::string p = "forecast.train";
      r.integer(t, p, "epochs", fc.train.epochs, 0);
      r.number(t, p, "initial_lr", fc.train.initial_lr, 0, kInf, true);
      r.number(t, p, "lr_min", fc.train.lr_min, 0, kInf);
      r.integer(t, p, "batch_size", fc.train.batch_size, 1);
      r.number(t, p, "gradient_clip", fc.train.gradient_clip, 0, kInf);
      r.number(t, p, "momentum", fc.train.momentum, 0, 1, false, true);
      if (fc.train.lr_min > fc.train.initial_lr) r.fail(p + ".lr_min", "must not exceed initial_lr");
    }
  }

  if (const auto* k = r.section(root, "", "cluster",
                                {"n_nodes", "node_cpu", "node_mem", "vm_cpu", "vm_mem", "initial_vms", "min_vms",
                                 "base_latency_ms", "provisioning_delay", "work_per_request"})) {
    const std::string p = "cluster";
    auto& cl = c.cluster;
    r.integer(k, p, "n_nodes", cl.n_nodes, 1);
    r.number(k, p, "node_cpu", cl.node_cpu, 0, kInf, true);
    r.number(k, p, "node_mem", cl.node_mem, 0, kInf, true);
    r.number(k, p, "vm_cpu", cl.vm_cpu, 0, kInf, true);
    r.number(k, p, "vm_mem", cl.vm_mem, 0, kInf, true);
    r.integer(k, p, "initial_vms", cl.initial_vms, 0);
    r.integer(k, p, "min_vms", cl.min_vms, 0);
    r.number(k, p, "base_latency_ms", cl.base_latency_ms, 0, kInf, true);
    r.integer(k, p, "provisioning_delay", cl.provisioning_delay, 0);
    r.number(k, p, "work_per_request", cl.work_per_request, 0, kInf);
  }
  try {
    c.cluster.validate();
  } catch (const ValidationError& e) {
    r.fail("cluster", e.what());
  }

  if (const auto* k = r.section(root, "", "constraints",
                                {"cpu_max", "mem_max", "storage_io_max", "p99_latency_max", "api_success_min",
                                 "max_node_imbalance"})) {
    const std::string p = "constraints";
    auto& cs = c.constraints;
    r.number(k, p, "cpu_max", cs.cpu_max, 0, 1, true);
    r.number(k, p, "mem_max", cs.mem_max, 0, 1, true);
    r.number(k, p, "storage_io_max", cs.storage_io_max, 0, 1, true);
    r.number(k, p, "p99_latency_max", cs.p99_latency_max, 0, kInf, true);
    r.number(k, p, "api_success_min", cs.api_success_min, 0, 1, true);
    r.number(k, p, "max_node_imbalance", cs.max_node_imbalance, 0, 1, true);
  }

  if (const auto* a = r.section(root, "", "agent",
                                {"gamma", "buffer_capacity", "batch_size", "sync_interval", "learning_rate", "hidden",
                                 "total_steps", "epsilon_start", "epsilon_end", "epsilon_decay_fraction",
                                 "learning_starts", "train_interval", "momentum", "gradient_clip", "episode_length",
                                 "weights", "vm_rate", "action_rate", "grid_step", "grid_search_steps"})) {
    const std::string p = "agent";
    auto& ag = c.agent;
    auto& ac = ag.config;
    r.number(a, p, "gamma", ac.gamma, 0, 1, false, true);
    r.integer(a, p, "buffer_capacity", ac.buffer_capacity, 1);
    r.integer(a, p, "batch_size", ac.batch_size, 1);
    r.integer(a, p, "sync_interval", ac.sync_interval, 1);
    r.number(a, p, "learning_rate", ac.learning_rate, 0, kInf, true);
    r.sizes(a, p, "hidden", ac.hidden, true);
    r.integer(a, p, "total_steps", ac.total_steps, 0);
    r.number(a, p, "epsilon_start", ac.epsilon_start, 0, 1);
    r.number(a, p, "epsilon_end", ac.epsilon_end, 0, 1);
    r.number(a, p, "epsilon_decay_fraction", ac.epsilon_decay_fraction, 0, 1);
    r.integer(a, p, "learning_starts", ac.learning_starts, 0);
    r.integer(a, p, "train_interval", ac.train_interval, 1);
    r.number(a, p, "momentum", ac.momentum, 0, 1, false, true);
    r.number(a, p, "gradient_clip", ac.gradient_clip, 0, kInf);
    r.integer(a, p, "episode_length", ag.env.episode_length, 1);
    if (a->contains("weights"))
      if (auto w = r.triple(a->at("weights"), p + ".weights")) ag.reward.weights = RewardWeights((*w)[0], (*w)[1], (*w)[2]);
    r.number(a, p, "vm_rate", ag.reward.vm_rate, 0, kInf);
    r.number(a, p, "action_rate", ag.reward.action_rate, 0, kInf);
    r.number(a, p, "grid_step", ag.grid_step, 0, 1, true);
    {
      const double n = 1.0 / ag.grid_step;
      if (std::abs(n - std::round(n)) > 1e-9) r.fail(p + ".grid_step", "must divide 1");
    }
    r.integer(a, p, "grid_search_steps", ag.grid_search_steps, 0);
  }

  if (const auto* o = r.section(root, "", "objective", {"weights", "pso"})) {
    auto& ob = c.objective;
    if (o->contains("weights")) {
      const auto& w = o->at("weights");
      if (w.is_string()) {
        if (w.get<std::string>() == "tune")
          ob.tune = true;
        else
          r.fail("objective.weights", "expected three weights or \"tune\"");
      } else if (auto t = r.triple(w, "objective.weights")) {
        ob.weights = ObjectiveWeights((*t)[0], (*t)[1], (*t)[2]);
      }
    }
    if (const auto* s = r.section(o, "objective", "pso", {"swarm_size", "iterations", "inertia", "cognitive", "social"})) {
      const std::string p = "objective.pso";
      r.integer(s, p, "swarm_size", ob.pso.swarm_size, 2);
      r.integer(s, p, "iterations", ob.pso.iterations, 1);
      r.number(s, p, "inertia", ob.pso.inertia, 0, kInf);
      r.number(s, p, "cognitive", ob.pso.cognitive, 0, kInf);
      r.number(s, p, "social", ob.pso.social, 0, kInf);
    }
  }

  if (const auto* k = r.section(root, "", "costs", {"server", "bandwidth", "storage", "labor"})) {
    r.number(k, "costs", "server", c.costs.server, 0, kInf);
    r.number(k, "costs", "bandwidth", c.costs.bandwidth, 0, kInf);
    r.number(k, "costs", "storage", c.costs.storage, 0, kInf);
    r.number(k, "costs", "labor", c.costs.labor, 0, kInf);
  }

  if (!r.errors.empty()) throw ConfigError(std::move(r.errors));
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open config '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": not valid JSON (" + e.what() + ")");
  }
  return validate_config(doc);
}

// ---------------------------------------------------------------------------
// Commands

namespace detail {

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

// Stage indices for seed derivation.
enum Stage : std::uint64_t { kGen = 1, kForecast = 2, kAgent = 3, kSimulate = 4, kTune = 5 };

struct Context {
  RunConfig cfg;
  fs::path out;
  std::ostream& log;

  std::uint64_t seed(Stage s) const { return derive_seed(cfg.seed, s); }
  fs::path file(const std::string& name) const { return out / name; }
};

inline Context make_context(const CommonArgs& a, std::ostream& log) {
  RunConfig cfg = a.config.empty() ? validate_config(nlohmann::json::object()) : load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.out.empty()) cfg.output_dir = a.out;
  fs::path out = cfg.output_dir;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw RuntimeError("cannot create output directory '" + out.string() + "': " + ec.message());
  return {std::move(cfg), std::move(out), log};
}

inline fs::path existing(const std::string& given, const fs::path& fallback, const char* what) {
  const fs::path p = given.empty() ? fallback : fs::path(given);
  if (!fs::exists(p)) throw ValidationError(std::string(what) + " '" + p.string() + "' does not exist");
  return p;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline std::size_t split_point(const RunConfig& cfg, std::size_t n) {
  const auto k = static_cast<std::size_t>(std::floor(cfg.train_ratio * static_cast<double>(n)));
  if (k == 0 || k >= n) throw ValidationError("trace of " + std::to_string(n) + " ticks is too short to split");
  return k;
}

// Demand forecasts for raw ticks [first, last), indexed from `first`: from the
// LSTM when a model is available, persistence otherwise.
inline ForecastProvider forecast_for(const Context& ctx, const TraceFrame& raw, const std::string& model_arg,
                                     const std::string& prepped_arg, std::size_t first, std::size_t last) {
  const fs::path model_path = model_arg.empty() ? ctx.file("forecast_model.json") : fs::path(model_arg);
  if (!fs::exists(model_path)) {
    if (!model_arg.empty()) throw ValidationError("forecast model '" + model_path.string() + "' does not exist");
    ctx.log << "no forecast model found; using persistence forecasts\n";
    return shifted_forecast(persistence_forecast(raw, ctx.cfg.cluster, ctx.cfg.forecast.arch.horizon), first);
  }
  const auto prepped_path = existing(prepped_arg, ctx.file("trace_prepped.csv"), "preprocessed trace");
  const auto model = load_checkpoint(model_path.string());
  const auto normalized = ingest_csv(prepped_path.string());
  ctx.log << "forecasting demand for ticks " << first << ".." << last << " with " << model_path.string() << '\n';
  return model_forecast(model, raw, normalized, ctx.cfg.forecast.window_len, ctx.cfg.cluster, first, last);
}

inline int cmd_gen(const CommonArgs& a, std::ostream& log) {
  auto ctx = make_context(a, log);
  TraceFrame frame;
  if (ctx.cfg.trace_input) {
    frame = ingest_csv(*ctx.cfg.trace_input);
  } else {
    WorkloadSpec spec = ctx.cfg.workload;
    spec.seed = ctx.seed(kGen);
    frame = generate_workload(spec);
  }
  const auto path = ctx.file("trace.csv");
  write_csv(frame, path.string());
  log << "wrote " << path.string() << " (" << frame.size() << " ticks)\n";
  return 0;
}

inline int cmd_prep(const CommonArgs& a, const std::string& trace_arg, std::ostream& log) {
  auto ctx = make_context(a, log);
  const auto trace_path = existing(trace_arg, ctx.file("trace.csv"), "trace");
  const auto raw = ingest_csv(trace_path.string());
  const auto res = preprocess(raw, ctx.cfg.preprocessing);
  write_csv(res.frame, ctx.file("trace_prepped.csv").string());
  write_json(ctx.file("scaler.json"), scaler_to_json(res.scaler));
  std::size_t removed = 0;
  for (auto n : res.removed_per_column) removed += n;
  log << "wrote " << ctx.file("trace_prepped.csv").string() << " (" << res.frame.size() << " ticks, " << removed
      << " outliers removed, " << res.filled_points << " points imputed)\n";
  return 0;
}

inline int cmd_train_forecast(const CommonArgs& a, const std::string& trace_arg, const std::string& scaler_arg,
                              std::ostream& log) {
  auto ctx = make_context(a, log);
  const auto& fc = ctx.cfg.forecast;
  const auto trace_path = existing(trace_arg, ctx.file("trace_prepped.csv"), "preprocessed trace");
  const auto scaler_path = existing(scaler_arg, ctx.file("scaler.json"), "scaler");
  const auto frame = ingest_csv(trace_path.string());
  ScalerParams scaler;
  try {
    scaler = scaler_from_json(read_json(scaler_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(scaler_path.string() + ": " + e.what());
  }
  const auto data = make_windows(frame, fc.window_len, fc.arch.horizon, fc.target);
  const auto [train_set, test_set] = split_train_test(data, ctx.cfg.train_ratio);
  auto model = init_model(fc.arch, ctx.seed(kForecast));
  model.target_metric = fc.target;
  model.scaler = scaler;
  TrainConfig tc = fc.train;
  tc.seed = derive_seed(ctx.seed(kForecast), 1);
  const auto result = train(std::move(model), train_set.strided(fc.window_stride), tc);
  save_checkpoint(result.model, ctx.file("forecast_model.json").string());

  std::ofstream curve(ctx.file("forecast_log.csv"), std::ios::binary);
  curve << "epoch,loss,learning_rate\n";
  for (std::size_t e = 0; e < result.loss_curve.size(); ++e)
    curve << e << ',' << format_double(result.loss_curve[e]) << ',' << format_double(result.learning_rates[e]) << '\n';

  const auto lstm = evaluate(result.model, test_set);
  const auto persist = evaluate_baseline(Baseline{}, test_set, scaler);
  auto metrics_json = [](const ForecastMetrics& m) {
    nlohmann::json j{{"rmse", m.rmse}, {"n_evaluated", m.n_evaluated}};
    j["mape_percent"] = m.mape ? nlohmann::json(*m.mape) : nlohmann::json(nullptr);
    return j;
  };
  nlohmann::json summary{{"target", fc.target}, {"lstm", metrics_json(lstm)}, {"persistence", metrics_json(persist)}};
  if (lstm.mape && persist.mape && *persist.mape > 0.0) summary["mape_ratio"] = *lstm.mape / *persist.mape;
  write_json(ctx.file("forecast_metrics.json"), summary);
  auto pct = [](const std::optional<double>& v) { return v ? format_double(std::round(*v * 100) / 100) + "%" : "n/a"; };
  log << "wrote " << ctx.file("forecast_model.json").string() << "; test MAPE " << pct(lstm.mape) << " vs persistence "
      << pct(persist.mape) << '\n';
  return 0;
}

inline AgentSetup agent_setup(const RunConfig& cfg) {
  AgentSetup s;
  s.cluster = cfg.cluster;
  s.constraints = cfg.constraints;
  s.reward = cfg.agent.reward;
  s.agent = cfg.agent.config;
  s.env = cfg.agent.env;
  return s;
}

inline int cmd_train_agent(const CommonArgs& a, const std::string& trace_arg, const std::string& model_arg,
                           const std::string& prepped_arg, bool grid, std::ostream& log) {
  auto ctx = make_context(a, log);
  const auto trace_path = existing(trace_arg, ctx.file("trace.csv"), "trace");
  const auto raw = ingest_csv(trace_path.string());
  const std::size_t cut = split_point(ctx.cfg, raw.size());
  const auto train_frame = raw.slice(0, cut);
  const auto forecast = forecast_for(ctx, raw, model_arg, prepped_arg, 0, cut);
  AgentSetup setup = agent_setup(ctx.cfg);
  setup.agent.seed = ctx.seed(kAgent);

  if (grid) {
    const std::size_t inner = split_point(ctx.cfg, train_frame.size());
    const auto fit = train_frame.slice(0, inner);
    const auto hold = train_frame.slice(inner, train_frame.size() - inner);
    AgentSetup short_setup = setup;
    short_setup.agent.total_steps = ctx.cfg.agent.grid_search_steps;
    const auto candidates = simplex_grid(ctx.cfg.agent.grid_step);
    log << "grid search over " << candidates.size() << " reward weightings\n";
    const auto g = grid_search_reward_weights(candidates, fit, hold, short_setup, forecast, shifted_forecast(forecast, inner),
                                              ctx.seed(kSimulate));
    std::ofstream table(ctx.file("reward_grid.csv"), std::ios::binary);
    table << "w1,w2,w3,score\n";
    for (const auto& row : g.table)
      table << format_double(row.weights.w1()) << ',' << format_double(row.weights.w2()) << ','
            << format_double(row.weights.w3()) << ',' << format_double(row.score) << '\n';
    setup.reward.weights = g.best;
    log << "best reward weights " << format_double(g.best.w1()) << ' ' << format_double(g.best.w2()) << ' '
        << format_double(g.best.w3()) << '\n';
  }

  const auto trained = train_cluster_agent(train_frame, setup, forecast);
  save_agent({trained.network, trained.log.final_epsilon, setup.agent.gamma, setup.reward.weights},
             ctx.file("agent.json").string());
  std::ofstream out(ctx.file("agent_log.csv"), std::ios::binary);
  out << "episode,return,length,mean_loss\n";
  const auto& L = trained.log;
  for (std::size_t i = 0; i < L.episode_returns.size(); ++i)
    out << i << ',' << format_double(L.episode_returns[i]) << ',' << L.episode_lengths[i] << ','
        << format_double(L.episode_losses[i]) << '\n';
  log << "wrote " << ctx.file("agent.json").string() << " after " << L.steps << " steps (" << L.episode_returns.size()
      << " episodes)\n";
  return 0;
}

inline int cmd_tune_weights(const CommonArgs& a, const std::string& trace_arg, const std::string& model_arg,
                            const std::string& prepped_arg, std::ostream& log) {
  auto ctx = make_context(a, log);
  const auto trace_path = existing(trace_arg, ctx.file("trace.csv"), "trace");
  const auto raw = ingest_csv(trace_path.string());
  const std::size_t cut = split_point(ctx.cfg, raw.size());
  const auto train_frame = raw.slice(0, cut);
  const auto forecast = forecast_for(ctx, raw, model_arg, prepped_arg, 0, cut);
  PsoConfig pso = ctx.cfg.objective.pso;
  pso.bounds.assign(3, Bounds{0.0, 1.0});
  pso.seed = ctx.seed(kTune);
  const auto harness =
      simulation_weight_harness(train_frame, ctx.cfg.cluster, ctx.cfg.constraints, forecast, ctx.seed(kSimulate));
  const auto r = tune_objective_weights(harness, pso);
  write_tuning_log(r.pso, ctx.file("tuning_log.csv").string());
  write_json(ctx.file("objective_weights.json"), {{"weights", r.weights.values()}, {"score", r.score}});
  log << "tuned objective weights " << format_double(r.weights.w1()) << ' ' << format_double(r.weights.w2()) << ' '
      << format_double(r.weights.w3()) << " (score " << format_double(r.score) << ")\n";
  return 0;
}

inline int cmd_simulate(const CommonArgs& a, const std::string& policy, const std::string& trace_arg,
                        const std::string& agent_arg, const std::string& model_arg, const std::string& prepped_arg,
                        const std::string& weights_arg, bool full, std::ostream& log) {
  auto ctx = make_context(a, log);
  const auto trace_path = existing(trace_arg, ctx.file("trace.csv"), "trace");
  const auto raw = ingest_csv(trace_path.string());
  const std::size_t first = full ? 0 : split_point(ctx.cfg, raw.size());
  const auto frame = raw.slice(first, raw.size() - first);
  const auto forecast = forecast_for(ctx, raw, model_arg, prepped_arg, first, raw.size());
  AgentSetup setup = agent_setup(ctx.cfg);
  const auto seed = ctx.seed(kSimulate);

  EpisodeTrace trace;
  if (policy == "dqn") {
    const auto agent_path = existing(agent_arg, ctx.file("agent.json"), "agent checkpoint");
    const auto ckpt = load_agent(agent_path.string());
    setup.reward.weights = ckpt.weights;
    trace = run_agent(frame, ckpt.network, setup, forecast, seed, "dqn");
  } else {
    Policy p;
    if (policy == "objective") {
      ObjectiveWeights w = ctx.cfg.objective.weights;
      const fs::path wp = weights_arg.empty() ? ctx.file("objective_weights.json") : fs::path(weights_arg);
      if (!weights_arg.empty() || ctx.cfg.objective.tune) existing(wp.string(), wp, "objective weights");
      if (fs::exists(wp)) {
        const auto j = read_json(wp);
        const auto v = j.at("weights").get<std::vector<double>>();
        if (v.size() != 3) throw ValidationError(wp.string() + ": expected three weights");
        w = ObjectiveWeights(v[0], v[1], v[2]);
      }
      p = objective_policy(w, ctx.cfg.constraints);
    } else {
      p = baseline_policy(parse_scheduler_baseline(policy), ctx.cfg.constraints);
    }
    EpisodeOptions opt;
    opt.policy_name = policy;
    opt.forecast = forecast;
    opt.reward = episode_reward(setup.reward, setup.constraints);
    trace = run_episode(frame, p, ctx.cfg.constraints, ctx.cfg.cluster, seed, opt);
  }
  const auto path = ctx.file("episode_" + policy + ".csv");
  write_episode_csv(trace, path.string());
  log << "wrote " << path.string() << " (" << trace.size() << " ticks)\n";
  return 0;
}

inline int cmd_evaluate(const CommonArgs& a, const std::string& policy, const std::string& episode_arg, std::ostream& log) {
  auto ctx = make_context(a, log);
  const auto path = existing(episode_arg, ctx.file("episode_" + policy + ".csv"), "episode trace");
  auto trace = read_episode_csv(path.string());
  trace.policy_name = policy;
  trace.seed = ctx.cfg.seed;
  const auto report = build_report(trace, ctx.cfg.constraints, ctx.cfg.costs);
  const auto files = emit_report(report, trace, ctx.file("report_" + policy + ".json"));
  log << "wrote " << files.report.string() << ": avg cpu " << format_double(round1(100 * report.avg_cpu_util))
      << "%, mean latency " << format_double(round1(report.latency_mean)) << " ms, SLA "
      << format_double(round1(100 * report.sla_rate)) << "%, cost " << format_double(round1(report.cost.total)) << '\n';
  return 0;
}

inline int cmd_compare(const CommonArgs& a, const std::string& base_arg, const std::string& cand_arg, std::ostream& log) {
  auto ctx = make_context(a, log);
  const auto base = read_report(existing(base_arg, ctx.file("report_static.json"), "baseline report"));
  const auto cand = read_report(existing(cand_arg, ctx.file("report_dqn.json"), "candidate report"));
  const auto cmp = compare_runs(base, cand);
  write_json(ctx.file("comparison.json"), comparison_to_json(cmp));
  for (const auto& m : cmp.changes)
    log << m.metric << ": " << format_double(m.baseline) << " -> " << format_double(m.candidate) << " ("
        << (std::isfinite(m.relative_change_pct) ? format_double(round1(m.relative_change_pct)) + "%" : "n/a") << ")\n";
  return 0;
}

}  // namespace detail

// Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Forecast-driven cloud resource allocation pipeline", "cloudalloc"};
  app.require_subcommand(1);
  detail::CommonArgs common;
  std::uint64_t seed_value = 0;
  std::string trace, scaler, model, prepped, agent_path, weights, episode, baseline, candidate;
  std::string policy = "dqn";
  bool grid = false, full = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run configuration");
    sub->add_option("--out", common.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed_value, "master seed (overrides seed)");
  };
  auto* gen = app.add_subcommand("gen", "generate or ingest the workload trace");
  auto* prep = app.add_subcommand("prep", "clean, resample and normalize a trace");
  auto* tf = app.add_subcommand("train-forecast", "train the LSTM demand forecaster");
  auto* ta = app.add_subcommand("train-agent", "train the double-DQN scheduler");
  auto* tw = app.add_subcommand("tune-weights", "tune objective weights by particle swarm");
  auto* sim = app.add_subcommand("simulate", "run a policy on the held-out trace");
  auto* ev = app.add_subcommand("evaluate", "summarize an episode into a report");
  auto* cmp = app.add_subcommand("compare", "compare two reports");
  for (auto* s : {gen, prep, tf, ta, tw, sim, ev, cmp}) add_common(s);
  prep->add_option("--trace", trace, "raw trace CSV");
  tf->add_option("--trace", trace, "preprocessed trace CSV");
  tf->add_option("--scaler", scaler, "scaler JSON");
  for (auto* s : {ta, tw, sim}) {
    s->add_option("--trace", trace, "raw trace CSV");
    s->add_option("--model", model, "forecast checkpoint");
    s->add_option("--prepped", prepped, "preprocessed trace aligned with --trace");
  }
  ta->add_flag("--grid-search", grid, "grid-search the reward weights first");
  sim->add_option("--policy", policy, "dqn, static, threshold_reactive or objective")
      ->check(CLI::IsMember({"dqn", "static", "threshold_reactive", "objective"}));
  sim->add_option("--agent", agent_path, "agent checkpoint");
  sim->add_option("--weights", weights, "objective weights JSON");
  sim->add_flag("--full", full, "run on the whole trace instead of the held-out part");
  ev->add_option("--policy", policy, "policy name used for file names");
  ev->add_option("--episode", episode, "episode CSV");
  cmp->add_option("--baseline", baseline, "baseline report JSON");
  cmp->add_option("--candidate", candidate, "candidate report JSON");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  for (auto* s : app.get_subcommands())
    if (s->count("--seed")) common.seed = seed_value;

  try {
    if (gen->parsed()) return detail::cmd_gen(common, out);
    if (prep->parsed()) return detail::cmd_prep(common, trace, out);
    if (tf->parsed()) return detail::cmd_train_forecast(common, trace, scaler, out);
    if (ta->parsed()) return detail::cmd_train_agent(common, trace, model, prepped, grid, out);
    if (tw->parsed()) return detail::cmd_tune_weights(common, trace, model, prepped, out);
    if (sim->parsed()) return detail::cmd_simulate(common, policy, trace, agent_path, model, prepped, weights, full, out);
    if (ev->parsed()) return detail::cmd_evaluate(common, policy, episode, out);
    if (cmp->parsed()) return detail::cmd_compare(common, baseline, candidate, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

inline int run_command(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_command(args);
}

}  // namespace cloudalloc
