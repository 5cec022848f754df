#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cloudalloc/action.hpp"
#include "cloudalloc/common.hpp"
#include "cloudalloc/random.hpp"
#include "cloudalloc/trace.hpp"

namespace cloudalloc {

struct ClusterConfig {
  std::size_t n_nodes = 20;
  double node_cpu = 8.0;   // cores
  double node_mem = 32.0;  // GB
  double vm_cpu = 1.0;
  double vm_mem = 4.0;
  std::size_t initial_vms = 160;
  std::size_t min_vms = 20;
  double base_latency_ms = 12.4;
  std::size_t provisioning_delay = 1;  // ticks between an expand and its activation
  double work_per_request = 0.16;      // cores per request/s
  std::uint64_t seed = 0;

  std::size_t vms_per_node() const {
    return static_cast<std::size_t>(std::min(std::floor(node_cpu / vm_cpu), std::floor(node_mem / vm_mem)));
  }
  std::size_t max_vms() const { return n_nodes * vms_per_node(); }

  void validate() const {
    if (n_nodes == 0) throw ValidationError("cluster needs at least one node");
    if (!(vm_cpu > 0.0 && vm_mem > 0.0)) throw ValidationError("VM sizes must be positive");
    if (vms_per_node() == 0) throw ValidationError("a node cannot host a single VM");
    if (!(base_latency_ms > 0.0)) throw ValidationError("base latency must be positive");
    if (!(work_per_request >= 0.0)) throw ValidationError("work_per_request must be non-negative");
    if (initial_vms > max_vms())
      throw ValidationError("initial_vms " + std::to_string(initial_vms) + " exceeds cluster capacity of " +
                            std::to_string(max_vms()) + " VMs");
    if (min_vms > max_vms()) throw ValidationError("min_vms exceeds cluster capacity");
  }

  bool operator==(const ClusterConfig&) const = default;
};

struct NodeState {
  std::size_t node_id = 0;
  double cpu_capacity = 0.0;
  double mem_capacity = 0.0;
  double cpu_used = 0.0;  // served load, never above provisioned capacity
  double mem_used = 0.0;
  double storage_io_util = 0.0;
  std::size_t vm_count = 0;

  bool operator==(const NodeState&) const = default;
};

struct Reservation {
  std::size_t activation_tick = 0;
  std::size_t vms = 0;
  bool operator==(const Reservation&) const = default;
};

struct ClusterState {
  ClusterConfig config;
  std::size_t tick = 0;
  std::vector<NodeState> nodes;
  std::vector<Reservation> pending_reservations;
  double last_latency_ms = 0.0;
  double request_success_rate = 1.0;

  std::size_t active_vms() const {
    std::size_t n = 0;
    for (const auto& nd : nodes) n += nd.vm_count;
    return n;
  }
  std::size_t pending_vms() const {
    std::size_t n = 0;
    for (const auto& r : pending_reservations) n += r.vms;
    return n;
  }
  double provisioned_cpu(const NodeState& n) const { return static_cast<double>(n.vm_count) * config.vm_cpu; }
  double provisioned_mem(const NodeState& n) const { return static_cast<double>(n.vm_count) * config.vm_mem; }
  double provisioned_cpu() const { return static_cast<double>(active_vms()) * config.vm_cpu; }

  double cpu_util(const NodeState& n) const {
    const double p = provisioned_cpu(n);
    return p > 0.0 ? n.cpu_used / p : 0.0;
  }
  double mem_util(const NodeState& n) const {
    const double p = provisioned_mem(n);
    return p > 0.0 ? n.mem_used / p : 0.0;
  }

  // Capacity-weighted mean CPU utilization.
  double cluster_cpu_util() const {
    double used = 0.0;
    for (const auto& n : nodes) used += n.cpu_used;
    const double p = provisioned_cpu();
    return p > 0.0 ? used / p : 0.0;
  }
  double cluster_mem_util() const {
    double used = 0.0, cap = 0.0;
    for (const auto& n : nodes) {
      used += n.mem_used;
      cap += provisioned_mem(n);
    }
    return cap > 0.0 ? used / cap : 0.0;
  }

  // max - min CPU utilization over nodes hosting at least one VM.
  double imbalance() const {
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (const auto& n : nodes) {
      if (n.vm_count == 0) continue;
      const double u = cpu_util(n);
      lo = any ? std::min(lo, u) : u;
      hi = any ? std::max(hi, u) : u;
      any = true;
    }
    return hi - lo;
  }

  bool operator==(const ClusterState&) const = default;
};

inline ClusterState init_cluster(const ClusterConfig& config) {
  config.validate();
  ClusterState s;
  s.config = config;
  for (std::size_t i = 0; i < config.n_nodes; ++i) {
    NodeState n;
    n.node_id = i;
    n.cpu_capacity = config.node_cpu;
    n.mem_capacity = config.node_mem;
    s.nodes.push_back(n);
  }
  for (std::size_t v = 0; v < config.initial_vms; ++v) ++s.nodes[v % config.n_nodes].vm_count;
  s.last_latency_ms = config.base_latency_ms;
  return s;
}

inline ClusterState init_cluster(std::size_t n_nodes, double node_cpu, double node_mem, std::size_t initial_vms,
                                 std::uint64_t seed) {
  ClusterConfig c;
  c.n_nodes = n_nodes;
  c.node_cpu = node_cpu;
  c.node_mem = node_mem;
  c.initial_vms = initial_vms;
  c.min_vms = std::min(c.min_vms, n_nodes);
  c.seed = seed;
  return init_cluster(c);
}

inline double offered_load(const TraceFrame& frame, std::size_t tick, double work_per_request) {
  if (tick >= frame.size())
    throw ValidationError("tick " + std::to_string(tick) + " outside trace of " + std::to_string(frame.size()) + " ticks");
  return frame.at(tick, "request_rate") * work_per_request;
}

inline constexpr double kDefaultBaseLatencyMs = 12.4;

// M/M/1-style response time: base / (1 - min(u, 0.99)).
inline double latency_model(double utilization, double base_latency_ms = kDefaultBaseLatencyMs) {
  if (utilization < 0.0) throw ValidationError("utilization must be non-negative");
  return base_latency_ms / (1.0 - std::min(utilization, 0.99));
}

// What one tick offers the cluster.
struct TickDemand {
  double cpu = 0.0;                // cores
  double mem_fraction = 0.0;       // fraction of provisioned memory in use
  double storage_io_util = 0.0;    // passed through to every node
};

inline TickDemand tick_demand(const TraceFrame& frame, std::size_t tick, const ClusterConfig& config) {
  return {offered_load(frame, tick, config.work_per_request), std::clamp(frame.at(tick, "mem_util"), 0.0, 1.0),
          std::clamp(frame.at(tick, "storage_util"), 0.0, 1.0)};
}

struct StepObservation {
  std::size_t tick = 0;
  std::size_t action_id = 0;
  bool infeasible = false;
  double demand = 0.0;
  double served = 0.0;
  double dropped = 0.0;
  double cpu_util = 0.0;
  double mem_util = 0.0;
  double storage_util = 0.0;
  double imbalance = 0.0;
  double latency_ms = 0.0;
  double success_rate = 1.0;
  std::size_t active_vms = 0;
  std::size_t pending_vms = 0;
  double provisioned_cpu = 0.0;
  std::vector<double> node_cpu_util;
};

namespace detail {

inline std::optional<std::size_t> node_to_grow(const ClusterState& s) {
  std::optional<std::size_t> best;
  const auto cap = s.config.vms_per_node();
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    if (s.nodes[i].vm_count >= cap) continue;
    if (!best || s.nodes[i].vm_count < s.nodes[*best].vm_count) best = i;
  }
  return best;
}

inline std::optional<std::size_t> node_to_shrink(const ClusterState& s) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    if (s.nodes[i].vm_count <= 1) continue;
    if (!best || s.nodes[i].vm_count > s.nodes[*best].vm_count) best = i;
  }
  return best;
}

inline void add_vms(ClusterState& s, std::size_t count) {
  for (std::size_t v = 0; v < count; ++v) {
    auto i = node_to_grow(s);
    if (!i) return;
    ++s.nodes[*i].vm_count;
  }
}

inline bool apply_action(ClusterState& s, const Action& a) {
  const auto level = static_cast<std::size_t>(a.level);
  switch (a.kind) {
    case ActionKind::noop:
      return true;
    case ActionKind::expand: {
      if (s.active_vms() + s.pending_vms() + level > s.config.max_vms()) return false;
      if (s.config.provisioning_delay == 0)
        add_vms(s, level);
      else
        s.pending_reservations.push_back({s.tick + s.config.provisioning_delay, level});
      return true;
    }
    case ActionKind::contract: {
      if (s.active_vms() < s.config.min_vms + level) return false;
      ClusterState trial = s;
      for (std::size_t v = 0; v < level; ++v) {
        auto i = node_to_shrink(trial);
        if (!i) return false;
        --trial.nodes[*i].vm_count;
      }
      s.nodes = std::move(trial.nodes);
      return true;
    }
    case ActionKind::migrate: {
      std::optional<std::size_t> hot, cold;
      for (std::size_t i = 0; i < s.nodes.size(); ++i) {
        if (s.nodes[i].vm_count == 0) continue;
        const double u = s.cpu_util(s.nodes[i]);
        if (!hot || u > s.cpu_util(s.nodes[*hot])) hot = i;
        if (!cold || u < s.cpu_util(s.nodes[*cold])) cold = i;
      }
      if (!hot || *hot == *cold || s.cpu_util(s.nodes[*hot]) <= s.cpu_util(s.nodes[*cold])) return false;
      const double moved = std::min(static_cast<double>(level) * s.config.vm_cpu, s.nodes[*hot].cpu_used);
      s.nodes[*hot].cpu_used -= moved;
      s.nodes[*cold].cpu_used += moved;
      return true;
    }
  }
  return false;
}

// Existing load keeps its placement (scaled down when demand falls); growth is
// routed proportionally to free provisioned capacity, and anything above a
// node's capacity spills to nodes with room or is dropped.
inline std::vector<double> route_demand(const ClusterState& s, double demand) {
  const std::size_t n = s.nodes.size();
  std::vector<double> load(n, 0.0);
  double prev = 0.0;
  for (const auto& nd : s.nodes) prev += nd.cpu_used;
  if (prev > 0.0 && demand <= prev) {
    for (std::size_t i = 0; i < n; ++i) load[i] = s.nodes[i].cpu_used * (demand / prev);
  } else {
    double free_total = 0.0;
    std::vector<double> free(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      free[i] = std::max(s.provisioned_cpu(s.nodes[i]) - s.nodes[i].cpu_used, 0.0);
      free_total += free[i];
      load[i] = s.nodes[i].cpu_used;
    }
    const double growth = demand - prev;
    if (free_total > 0.0) {
      for (std::size_t i = 0; i < n; ++i) load[i] += growth * (free[i] / free_total);
    } else if (n > 0) {
      load[0] += growth;  // nowhere to go; dropped below
    }
  }
  // spill
  std::vector<double> served(n, 0.0);
  double overflow = 0.0, room_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double cap = s.provisioned_cpu(s.nodes[i]);
    served[i] = std::min(load[i], cap);
    overflow += load[i] - served[i];
    room_total += cap - served[i];
  }
  if (overflow > 0.0 && room_total > 0.0) {
    const double moved = std::min(overflow, room_total);
    for (std::size_t i = 0; i < n; ++i) {
      const double cap = s.provisioned_cpu(s.nodes[i]);
      served[i] = std::min(cap, served[i] + moved * ((cap - served[i]) / room_total));
    }
  }
  return served;
}

}  // namespace detail

// One tick: (1) activate matured reservations, (2) apply the action,
// (3) route demand, (4) derive utilizations, latency and success rate.
// Infeasible actions leave the cluster as it was and set the flag.
inline std::pair<ClusterState, StepObservation> step(ClusterState state, const TickDemand& demand, const Action& action) {
  if (!action.valid()) throw ValidationError("invalid action");
  StepObservation obs;
  obs.tick = state.tick;
  obs.action_id = action.id();

  auto& pending = state.pending_reservations;
  for (auto it = pending.begin(); it != pending.end();) {
    if (it->activation_tick <= state.tick) {
      detail::add_vms(state, it->vms);
      it = pending.erase(it);
    } else {
      ++it;
    }
  }

  obs.infeasible = !detail::apply_action(state, action);

  const double cpu_demand = std::max(demand.cpu, 0.0);
  const auto served = detail::route_demand(state, cpu_demand);
  double served_total = 0.0, weighted_latency = 0.0;
  for (std::size_t i = 0; i < state.nodes.size(); ++i) {
    auto& nd = state.nodes[i];
    nd.cpu_used = served[i];
    nd.mem_used = demand.mem_fraction * state.provisioned_mem(nd);
    nd.storage_io_util = nd.vm_count > 0 ? demand.storage_io_util : 0.0;
    served_total += served[i];
    weighted_latency += served[i] * latency_model(state.cpu_util(nd), state.config.base_latency_ms);
  }

  obs.demand = cpu_demand;
  obs.served = std::min(served_total, cpu_demand);
  obs.dropped = cpu_demand - obs.served;
  obs.success_rate = cpu_demand > 0.0 ? obs.served / cpu_demand : 1.0;
  obs.latency_ms = served_total > 0.0 ? weighted_latency / served_total : state.config.base_latency_ms;
  if (obs.dropped > 1e-9 * std::max(cpu_demand, 1.0))
    obs.latency_ms = std::max(obs.latency_ms, latency_model(1.0, state.config.base_latency_ms));
  obs.cpu_util = state.cluster_cpu_util();
  obs.mem_util = state.cluster_mem_util();
  obs.storage_util = demand.storage_io_util;
  obs.imbalance = state.imbalance();
  obs.active_vms = state.active_vms();
  obs.pending_vms = state.pending_vms();
  obs.provisioned_cpu = state.provisioned_cpu();
  for (const auto& nd : state.nodes) obs.node_cpu_util.push_back(state.cpu_util(nd));

  state.last_latency_ms = obs.latency_ms;
  state.request_success_rate = obs.success_rate;
  ++state.tick;
  return {std::move(state), std::move(obs)};
}

// ---------------------------------------------------------------------------
// Constraints

struct ConstraintSet {
  double cpu_max = 0.85;
  double mem_max = 0.90;
  double storage_io_max = 0.80;
  double p99_latency_max = 200.0;  // ms
  double api_success_min = 0.999;
  double max_node_imbalance = 0.20;

  void validate() const {
    for (double f : {cpu_max, mem_max, storage_io_max, api_success_min, max_node_imbalance})
      if (!(f > 0.0 && f <= 1.0)) throw ValidationError("constraint fractions must lie in (0,1]");
    if (!(p99_latency_max > 0.0)) throw ValidationError("latency bound must be positive");
  }
};

struct Violation {
  std::string constraint;
  double observed = 0.0;
  double bound = 0.0;
  bool operator==(const Violation&) const = default;
};

struct ConstraintReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

// Maxima are violated when exceeded, the success minimum when undershot.
// Values within kConstraintTolerance of a bound count as on the bound.
inline constexpr double kConstraintTolerance = 1e-9;

inline ConstraintReport check_constraints(const ClusterState& state, const ConstraintSet& c) {
  constexpr double eps = kConstraintTolerance;
  ConstraintReport r;
  double cpu = 0.0, mem = 0.0, io = 0.0;
  for (const auto& n : state.nodes) {
    cpu = std::max(cpu, state.cpu_util(n));
    mem = std::max(mem, state.mem_util(n));
    io = std::max(io, n.storage_io_util);
  }
  if (cpu > c.cpu_max + eps) r.violations.push_back({"cpu_max", cpu, c.cpu_max});
  if (mem > c.mem_max + eps) r.violations.push_back({"mem_max", mem, c.mem_max});
  if (io > c.storage_io_max + eps) r.violations.push_back({"storage_io_max", io, c.storage_io_max});
  if (state.last_latency_ms > c.p99_latency_max + eps)
    r.violations.push_back({"p99_latency_max", state.last_latency_ms, c.p99_latency_max});
  if (state.request_success_rate < c.api_success_min - eps)
    r.violations.push_back({"api_success_min", state.request_success_rate, c.api_success_min});
  const double imb = state.imbalance();
  if (imb > c.max_node_imbalance + eps) r.violations.push_back({"max_node_imbalance", imb, c.max_node_imbalance});
  return r;
}

// ---------------------------------------------------------------------------
// Episodes

struct Decision {
  std::size_t action_id = 0;
  std::optional<Reservation> reservation;
};

struct PolicyContext {
  const ClusterState& state;
  const TraceFrame& frame;
  std::size_t tick;
  const std::vector<StepObservation>& history;  // observations of ticks before `tick`
  std::vector<double> forecast;                  // predicted demand (cores) for tick+1 ...
  Rng& rng;
};

using Policy = std::function<Decision(const PolicyContext&)>;

// Predicted CPU demand for ticks t+1 .. t+h, indexed by the current tick.
using ForecastProvider = std::function<std::vector<double>(std::size_t tick)>;
using RewardFn = std::function<double(const StepObservation&, const ClusterState&)>;

inline ForecastProvider persistence_forecast(const TraceFrame& frame, const ClusterConfig& config, std::size_t horizon) {
  return [&frame, config, horizon](std::size_t tick) {
    return std::vector<double>(horizon, offered_load(frame, tick, config.work_per_request));
  };
}

inline ForecastProvider perfect_forecast(const TraceFrame& frame, const ClusterConfig& config, std::size_t horizon) {
  return [&frame, config, horizon](std::size_t tick) {
    std::vector<double> f(horizon);
    for (std::size_t k = 0; k < horizon; ++k)
      f[k] = offered_load(frame, std::min(tick + 1 + k, frame.size() - 1), config.work_per_request);
    return f;
  };
}

struct EpisodeRow {
  std::size_t tick = 0;
  double demand = 0.0;
  double cpu_util = 0.0;
  double mem_util = 0.0;
  double latency_ms = 0.0;
  double success_rate = 1.0;
  std::size_t action_id = 0;
  double reward = 0.0;
  std::size_t violations_count = 0;
  double storage_util = 0.0;
  double net_traffic = 0.0;
  double provisioned_cpu = 0.0;
  std::size_t active_vms = 0;
  bool infeasible = false;

  bool operator==(const EpisodeRow&) const = default;
};

struct EpisodeTrace {
  std::string policy_name;
  std::uint64_t seed = 0;
  std::vector<EpisodeRow> rows;

  std::size_t size() const { return rows.size(); }
  bool operator==(const EpisodeTrace&) const = default;
};

struct EpisodeOptions {
  std::string policy_name = "policy";
  ForecastProvider forecast;  // persistence when empty
  std::size_t forecast_horizon = 12;
  RewardFn reward;            // zero reward when empty
};

inline EpisodeTrace run_episode(const TraceFrame& frame, const Policy& policy, const ConstraintSet& constraints,
                                const ClusterConfig& config, std::uint64_t seed, const EpisodeOptions& options = {}) {
  EpisodeTrace trace;
  trace.policy_name = options.policy_name;
  trace.seed = seed;
  if (frame.empty()) return trace;
  constraints.validate();
  auto forecast = options.forecast ? options.forecast : persistence_forecast(frame, config, options.forecast_horizon);
  Rng rng(seed);
  ClusterState state = init_cluster(config);
  std::vector<StepObservation> history;
  history.reserve(frame.size());
  const bool has_net = std::find(frame.names.begin(), frame.names.end(), "net_in") != frame.names.end();
  for (std::size_t t = 0; t < frame.size(); ++t) {
    PolicyContext ctx{state, frame, t, history, forecast(t), rng};
    const Decision d = policy(ctx);
    if (d.action_id >= kActionCount)
      throw ValidationError("policy '" + options.policy_name + "' returned action id " + std::to_string(d.action_id) +
                            " at tick " + std::to_string(t));
    if (d.reservation && d.reservation->vms > 0 && d.reservation->activation_tick >= t &&
        state.active_vms() + state.pending_vms() + d.reservation->vms <= config.max_vms())
      state.pending_reservations.push_back(*d.reservation);
    auto [next, obs] = step(std::move(state), tick_demand(frame, t, config), Action::from_id(d.action_id));
    state = std::move(next);
    const auto report = check_constraints(state, constraints);
    EpisodeRow row;
    row.tick = t;
    row.demand = obs.demand;
    row.cpu_util = obs.cpu_util;
    row.mem_util = obs.mem_util;
    row.latency_ms = obs.latency_ms;
    row.success_rate = obs.success_rate;
    row.action_id = obs.action_id;
    row.reward = options.reward ? options.reward(obs, state) : 0.0;
    row.violations_count = report.violations.size();
    row.storage_util = obs.storage_util;
    row.net_traffic = has_net ? frame.at(t, "net_in") + frame.at(t, "net_out") : 0.0;
    row.provisioned_cpu = obs.provisioned_cpu;
    row.active_vms = obs.active_vms;
    row.infeasible = obs.infeasible;
    trace.rows.push_back(row);
    history.push_back(std::move(obs));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Episode CSV

inline constexpr std::string_view kEpisodeHeader =
    "tick,demand,cpu_util,mem_util,latency_ms,success_rate,action_id,reward,violations_count,"
    "storage_util,net_traffic,provisioned_cpu,active_vms,infeasible";

inline void write_episode_csv(const EpisodeTrace& trace, std::ostream& out) {
  out << kEpisodeHeader << '\n';
  for (const auto& r : trace.rows) {
    out << r.tick << ',' << format_double(r.demand) << ',' << format_double(r.cpu_util) << ','
        << format_double(r.mem_util) << ',' << format_double(r.latency_ms) << ',' << format_double(r.success_rate)
        << ',' << r.action_id << ',' << format_double(r.reward) << ',' << r.violations_count << ','
        << format_double(r.storage_util) << ',' << format_double(r.net_traffic) << ','
        << format_double(r.provisioned_cpu) << ',' << r.active_vms << ',' << (r.infeasible ? 1 : 0) << '\n';
  }
}

inline void write_episode_csv(const EpisodeTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path + "' for writing");
  write_episode_csv(trace, out);
}

inline EpisodeTrace parse_episode_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line) || line != kEpisodeHeader)
    throw ValidationError(source + ":1: not an episode trace header");
  EpisodeTrace trace;
  std::size_t lineno = 1;
  auto num = [&](std::string_view cell) {
    double v = 0.0;
    if (!parse_double(cell, v)) throw ValidationError(source + ":" + std::to_string(lineno) + ": bad number '" + std::string(cell) + "'");
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = detail::split_commas(line);
    if (c.size() != 14) throw ValidationError(source + ":" + std::to_string(lineno) + ": expected 14 fields");
    EpisodeRow r;
    r.tick = static_cast<std::size_t>(num(c[0]));
    r.demand = num(c[1]);
    r.cpu_util = num(c[2]);
    r.mem_util = num(c[3]);
    r.latency_ms = num(c[4]);
    r.success_rate = num(c[5]);
    r.action_id = static_cast<std::size_t>(num(c[6]));
    r.reward = num(c[7]);
    r.violations_count = static_cast<std::size_t>(num(c[8]));
    r.storage_util = num(c[9]);
    r.net_traffic = num(c[10]);
    r.provisioned_cpu = num(c[11]);
    r.active_vms = static_cast<std::size_t>(num(c[12]));
    r.infeasible = num(c[13]) != 0.0;
    trace.rows.push_back(r);
  }
  return trace;
}

inline EpisodeTrace read_episode_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open episode trace '" + path + "'");
  return parse_episode_csv(in, path);
}

}  // namespace cloudalloc
