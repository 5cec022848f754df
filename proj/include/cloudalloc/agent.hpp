#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <fstream>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cloudalloc/action.hpp"
#include "cloudalloc/common.hpp"
#include "cloudalloc/nn.hpp"
#include "cloudalloc/random.hpp"
#include "cloudalloc/simenv.hpp"

namespace cloudalloc {

inline constexpr std::size_t kStateMetrics = 14;
inline constexpr std::size_t kStateSize = 3 * kStateMetrics;
inline constexpr std::size_t kRollingWindow = 12;

using MetricVector = std::array<double, kStateMetrics>;

// [current metrics | one-step forecast | mean of the last 12 ticks].
// Short histories are padded by repeating their first tick; a forecast shorter
// than 14 repeats its last value, an empty one repeats the current metrics.
inline std::vector<double> encode_state(std::span<const MetricVector> history, std::span<const double> forecast) {
  if (history.empty()) throw ValidationError("encode_state needs at least one tick of history");
  std::vector<double> s(kStateSize, 0.0);
  const MetricVector& cur = history.back();
  for (std::size_t i = 0; i < kStateMetrics; ++i) {
    s[i] = cur[i];
    if (forecast.empty())
      s[kStateMetrics + i] = cur[i];
    else
      s[kStateMetrics + i] = forecast[std::min(i, forecast.size() - 1)];
  }
  const std::size_t n = std::min(history.size(), kRollingWindow);
  const auto recent = history.subspan(history.size() - n);
  const double pad = static_cast<double>(kRollingWindow - n);
  for (std::size_t i = 0; i < kStateMetrics; ++i) {
    double acc = pad * recent.front()[i];
    for (const auto& row : recent) acc += row[i];
    s[2 * kStateMetrics + i] = acc / static_cast<double>(kRollingWindow);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Reward

class RewardWeights {
 public:
  RewardWeights() : RewardWeights(0.4, 0.4, 0.2) {}
  RewardWeights(double w1, double w2, double w3) {
    if (!(w1 >= 0.0 && w2 >= 0.0 && w3 >= 0.0)) throw ValidationError("reward weights must be non-negative");
    const double sum = w1 + w2 + w3;
    if (!(sum > 0.0) || !std::isfinite(sum)) throw ValidationError("reward weights must have a positive finite sum");
    w_ = {w1 / sum, w2 / sum, w3 / sum};
  }
  double w1() const { return w_[0]; }
  double w2() const { return w_[1]; }
  double w3() const { return w_[2]; }
  const std::array<double, 3>& values() const { return w_; }
  bool operator==(const RewardWeights&) const = default;

 private:
  std::array<double, 3> w_{};
};

// R = w1 U + w2 P - w3 C with U, P, C already normalized to [0, 1].
inline double reward(double U, double P, double C, const RewardWeights& w) {
  if (!(U >= 0.0 && U <= 1.0) || !(P >= 0.0 && P <= 1.0) || !(C >= 0.0 && C <= 1.0))
    throw ValidationError("reward components must lie in [0,1]: U=" + format_double(U) + " P=" + format_double(P) +
                          " C=" + format_double(C));
  return w.w1() * U + w.w2() * P - w.w3() * C;
}

struct RewardComponents {
  double U = 0.0;
  double P = 0.0;
  double C = 0.0;
};

struct RewardModel {
  RewardWeights weights;
  double vm_rate = 1.0;      // cost of one active VM for one tick
  double action_rate = 0.5;  // cost of one level of scheduling action

  RewardComponents components(const StepObservation& obs, const ClusterConfig& config,
                              const ConstraintSet& constraints) const {
    RewardComponents r;
    r.U = std::clamp(obs.cpu_util, 0.0, 1.0);
    r.P = 1.0 - std::min(obs.latency_ms / constraints.p99_latency_max, 1.0);
    const auto a = Action::from_id(obs.action_id);
    const double max_cost = static_cast<double>(config.max_vms()) * vm_rate + kActionLevels * action_rate;
    const double cost = static_cast<double>(obs.active_vms) * vm_rate + a.level * action_rate;
    r.C = max_cost > 0.0 ? std::clamp(cost / max_cost, 0.0, 1.0) : 0.0;
    return r;
  }

  double operator()(const StepObservation& obs, const ClusterConfig& config, const ConstraintSet& constraints) const {
    const auto c = components(obs, config, constraints);
    return reward(c.U, c.P, c.C, weights);
  }
};

// ---------------------------------------------------------------------------
// State encoding for the cluster simulator

class ClusterStateEncoder {
 public:
  ClusterStateEncoder(ClusterConfig config, ConstraintSet constraints)
      : config_(std::move(config)), constraints_(constraints) {}

  MetricVector metrics(const StepObservation& obs, std::int64_t timestamp) const {
    const double max_vms = static_cast<double>(std::max<std::size_t>(config_.max_vms(), 1));
    const double max_cap = max_vms * config_.vm_cpu;
    const double prov = std::max(obs.provisioned_cpu, config_.vm_cpu);
    MetricVector m{};
    m[0] = obs.cpu_util;
    m[1] = obs.mem_util;
    m[2] = obs.storage_util;
    m[3] = obs.node_cpu_util.empty() ? obs.cpu_util : *std::max_element(obs.node_cpu_util.begin(), obs.node_cpu_util.end());
    m[4] = obs.imbalance;
    m[5] = static_cast<double>(obs.active_vms) / max_vms;
    m[6] = static_cast<double>(obs.pending_vms) / max_vms;
    m[7] = std::min(obs.demand / prov, 2.0) / 2.0;
    m[8] = std::min(obs.demand / max_cap, 2.0);
    m[9] = std::min(obs.latency_ms / constraints_.p99_latency_max, 1.0);
    m[10] = 1.0 - obs.success_rate;
    m[11] = obs.infeasible ? 1.0 : 0.0;
    set_hour(m, timestamp);
    return m;
  }

  // Metrics expected at the next tick if demand matches the forecast and
  // capacity including pending reservations is in place.
  MetricVector predicted(const MetricVector& current, const ClusterState& state, double demand,
                         std::int64_t next_timestamp) const {
    const double max_vms = static_cast<double>(std::max<std::size_t>(config_.max_vms(), 1));
    const double prov = std::max(static_cast<double>(state.active_vms() + state.pending_vms()) * config_.vm_cpu, config_.vm_cpu);
    const double u = std::max(demand, 0.0) / prov;
    MetricVector m = current;
    m[0] = std::min(u, 1.0);
    m[3] = std::min(u, 1.0);
    m[5] = static_cast<double>(state.active_vms() + state.pending_vms()) / max_vms;
    m[6] = 0.0;
    m[7] = std::min(u, 2.0) / 2.0;
    m[8] = std::min(std::max(demand, 0.0) / (max_vms * config_.vm_cpu), 2.0);
    m[9] = std::min(latency_model(std::min(u, 1.0), config_.base_latency_ms) / constraints_.p99_latency_max, 1.0);
    m[10] = demand > prov ? 1.0 - prov / demand : 0.0;
    m[11] = 0.0;
    set_hour(m, next_timestamp);
    return m;
  }

  // Observation used before the first tick has been simulated.
  static StepObservation idle_observation(const ClusterState& state) {
    StepObservation o;
    o.tick = state.tick;
    o.cpu_util = state.cluster_cpu_util();
    o.mem_util = state.cluster_mem_util();
    o.imbalance = state.imbalance();
    o.latency_ms = state.last_latency_ms;
    o.success_rate = state.request_success_rate;
    o.active_vms = state.active_vms();
    o.pending_vms = state.pending_vms();
    o.provisioned_cpu = state.provisioned_cpu();
    for (const auto& n : state.nodes) o.node_cpu_util.push_back(state.cpu_util(n));
    return o;
  }

  std::vector<double> encode(const ClusterState& state, std::span<const StepObservation> history,
                             std::span<const double> forecast, const TraceFrame& frame, std::size_t tick) const {
    auto ts = [&frame](std::size_t t) {
      if (frame.empty()) return std::int64_t{0};
      if (t < frame.size()) return frame.timestamps[t];
      return frame.timestamps.back() + static_cast<std::int64_t>(t - frame.size() + 1) * frame.tick_interval;
    };
    std::vector<MetricVector> rows;
    if (history.empty()) {
      rows.push_back(metrics(idle_observation(state), ts(tick)));
    } else {
      const std::size_t n = std::min(history.size(), kRollingWindow);
      for (std::size_t i = history.size() - n; i < history.size(); ++i) rows.push_back(metrics(history[i], ts(history[i].tick)));
    }
    const double f0 = forecast.empty() ? (history.empty() ? 0.0 : history.back().demand) : forecast.front();
    const auto pred = predicted(rows.back(), state, f0, ts(tick + 1));
    return encode_state(rows, pred);
  }

  const ClusterConfig& config() const { return config_; }
  const ConstraintSet& constraints() const { return constraints_; }

 private:
  static void set_hour(MetricVector& m, std::int64_t timestamp) {
    const double h = static_cast<double>(((timestamp % 86400) + 86400) % 86400) / 3600.0;
    m[12] = std::sin(2.0 * std::numbers::pi * h / 24.0);
    m[13] = std::cos(2.0 * std::numbers::pi * h / 24.0);
  }

  ClusterConfig config_;
  ConstraintSet constraints_;
};

// ---------------------------------------------------------------------------
// Q-network and double-DQN machinery

struct QNetwork {
  Mlp mlp;

  static QNetwork init(std::size_t state_size, const std::vector<std::size_t>& hidden, std::size_t actions, Rng& rng) {
    std::vector<std::size_t> sizes{state_size};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(actions);
    return {Mlp::init(sizes, rng)};
  }

  std::vector<double> q(std::span<const double> s) const { return mlp.forward(s); }
  std::size_t action_count() const { return mlp.output_size(); }
  std::size_t state_size() const { return mlp.input_size(); }
  bool operator==(const QNetwork& o) const { return mlp == o.mlp; }
};

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw ValidationError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline std::size_t select_action(std::span<const double> q_values, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0,1]");
  if (epsilon > 0.0 && rng.uniform() < epsilon) return rng.index(q_values.size());
  return argmax(q_values);
}

inline std::size_t select_action(const QNetwork& q, std::span<const double> s, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0,1]");
  if (epsilon > 0.0 && rng.uniform() < epsilon) return rng.index(q.action_count());
  return argmax(q.q(s));
}

// Online network picks the next action, target network values it.
inline double dqn_target(double r, std::span<const double> online_next, std::span<const double> target_next, bool terminal,
                         double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in [0,1)");
  if (terminal) return r;
  return r + gamma * target_next[argmax(online_next)];
}

inline double dqn_target(double r, std::span<const double> next_s, bool terminal, const QNetwork& online,
                         const QNetwork& target, double gamma) {
  if (terminal) return dqn_target(r, {}, {}, true, gamma);
  const auto a = online.q(next_s);
  const auto b = target.q(next_s);
  return dqn_target(r, a, b, false, gamma);
}

struct Transition {
  std::vector<double> state;
  std::size_t action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  bool terminal = false;
  bool operator==(const Transition&) const = default;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ValidationError("replay buffer capacity must be positive");
    items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void push(Transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }

  // Oldest first.
  std::vector<Transition> contents() const {
    std::vector<Transition> out;
    out.reserve(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) out.push_back(items_[(head_ + i) % items_.size()]);
    return out;
  }

  // Uniform with replacement.
  std::vector<const Transition*> sample(std::size_t batch, Rng& rng) const {
    if (items_.empty()) throw ValidationError("cannot sample an empty replay buffer");
    std::vector<const Transition*> out(batch);
    for (auto& p : out) p = &items_[rng.index(items_.size())];
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> items_;
};

// ---------------------------------------------------------------------------
// Training

struct EnvStep {
  std::vector<double> state;
  double reward = 0.0;
  bool terminal = false;   // no bootstrap past this transition
  bool truncated = false;  // episode cut by a time limit
};

template <typename E>
concept Environment = requires(E e, Rng& rng, std::size_t a) {
  { e.reset(rng) } -> std::convertible_to<std::vector<double>>;
  { e.step(a) } -> std::convertible_to<EnvStep>;
  { e.state_size() } -> std::convertible_to<std::size_t>;
  { e.action_count() } -> std::convertible_to<std::size_t>;
};

struct AgentConfig {
  double gamma = 0.95;
  std::size_t buffer_capacity = 10000;
  std::size_t batch_size = 64;
  std::size_t sync_interval = 250;
  double learning_rate = 1e-3;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t total_steps = 20000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_decay_fraction = 0.5;
  std::size_t learning_starts = 500;
  std::size_t train_interval = 1;
  double momentum = 0.9;
  double gradient_clip = 5.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in [0,1)");
    if (buffer_capacity == 0 || batch_size == 0 || sync_interval == 0 || train_interval == 0)
      throw ValidationError("buffer_capacity, batch_size, sync_interval and train_interval must be positive");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0))
      throw ValidationError("epsilon bounds must lie in [0,1]");
    if (!(epsilon_decay_fraction >= 0.0 && epsilon_decay_fraction <= 1.0))
      throw ValidationError("epsilon_decay_fraction must lie in [0,1]");
    for (auto h : hidden)
      if (h == 0) throw ValidationError("hidden layer of size zero");
  }

  double epsilon_at(std::size_t step) const {
    const double decay = epsilon_decay_fraction * static_cast<double>(total_steps);
    if (decay <= 0.0) return epsilon_end;
    const double frac = std::min(static_cast<double>(step) / decay, 1.0);
    return epsilon_start + (epsilon_end - epsilon_start) * frac;
  }
};

struct TrainingLog {
  std::vector<double> episode_returns;
  std::vector<std::size_t> episode_lengths;
  std::vector<double> episode_losses;  // mean TD loss of the updates made during each episode
  std::size_t steps = 0;
  std::size_t updates = 0;
  double final_epsilon = 1.0;
  bool operator==(const TrainingLog&) const = default;
};

struct AgentTrainResult {
  QNetwork network;
  TrainingLog log;
};

namespace detail {

inline double dqn_update(QNetwork& online, const QNetwork& target, const std::vector<const Transition*>& batch,
                         double gamma, MomentumSgd& opt, double lr) {
  QNetwork grad{online.mlp.zeros_like()};
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  Mlp::Cache cache;
  std::vector<double> dout(online.action_count(), 0.0);
  for (const Transition* t : batch) {
    const double y = dqn_target(t->reward, t->next_state, t->terminal, online, target, gamma);
    const auto q = online.mlp.forward(t->state, &cache);
    const double err = q[t->action] - y;
    loss += err * err * scale;
    std::fill(dout.begin(), dout.end(), 0.0);
    dout[t->action] = 2.0 * err * scale;
    online.mlp.backward(cache, dout, grad.mlp);
  }
  if (!std::isfinite(loss)) throw RuntimeError("agent training diverged (TD loss is not finite); lower learning_rate");
  opt.step(online.mlp.tensors("q."), grad.mlp.tensors("q."), lr);
  return loss;
}

}  // namespace detail

template <Environment Env>
AgentTrainResult train_agent(Env& env, const AgentConfig& config) {
  config.validate();
  Rng init_rng(derive_seed(config.seed, 0));
  Rng env_rng(derive_seed(config.seed, 1));
  Rng explore_rng(derive_seed(config.seed, 2));
  Rng sample_rng(derive_seed(config.seed, 3));

  AgentTrainResult result{QNetwork::init(env.state_size(), config.hidden, env.action_count(), init_rng), {}};
  auto& online = result.network;
  auto& log = result.log;
  log.final_epsilon = config.epsilon_start;
  if (config.total_steps == 0) return result;

  QNetwork target = online;
  ReplayBuffer buffer(config.buffer_capacity);
  MomentumSgd opt(config.momentum, config.gradient_clip);

  std::vector<double> state = env.reset(env_rng);
  double ep_return = 0.0, ep_loss = 0.0;
  std::size_t ep_len = 0, ep_updates = 0;
  auto close_episode = [&] {
    log.episode_returns.push_back(ep_return);
    log.episode_lengths.push_back(ep_len);
    log.episode_losses.push_back(ep_updates ? ep_loss / static_cast<double>(ep_updates) : 0.0);
    ep_return = ep_loss = 0.0;
    ep_len = ep_updates = 0;
  };

  for (std::size_t step = 0; step < config.total_steps; ++step) {
    const double eps = config.epsilon_at(step);
    const std::size_t a = select_action(online, state, eps, explore_rng);
    EnvStep r = env.step(a);
    ep_return += r.reward;
    ++ep_len;
    buffer.push({state, a, r.reward, r.state, r.terminal});

    if (buffer.size() >= std::max(config.batch_size, config.learning_starts) && step % config.train_interval == 0) {
      ep_loss += detail::dqn_update(online, target, buffer.sample(config.batch_size, sample_rng), config.gamma, opt,
                                    config.learning_rate);
      ++ep_updates;
      ++log.updates;
    }
    if ((step + 1) % config.sync_interval == 0) target = online;

    if (r.terminal || r.truncated) {
      close_episode();
      state = env.reset(env_rng);
    } else {
      state = std::move(r.state);
    }
    log.final_epsilon = eps;
  }
  if (ep_len > 0) close_episode();
  log.steps = config.total_steps;
  return result;
}

// ---------------------------------------------------------------------------
// Cluster environment

struct ClusterEnvOptions {
  std::size_t episode_length = 288;
  bool random_start = true;
  bool random_initial_vms = true;
};

class ClusterEnv {
 public:
  ClusterEnv(const TraceFrame& frame, ClusterConfig config, ConstraintSet constraints, RewardModel reward,
             ForecastProvider forecast = {}, ClusterEnvOptions options = {})
      : frame_(frame),
        config_(std::move(config)),
        encoder_(config_, constraints),
        reward_(reward),
        forecast_(forecast ? std::move(forecast) : persistence_forecast(frame, config_, kDefaultHorizon)),
        options_(options) {
    config_.validate();
    constraints.validate();
    if (frame_.empty()) throw ValidationError("agent training needs a non-empty trace");
    if (options_.episode_length == 0) throw ValidationError("episode_length must be positive");
  }

  std::size_t state_size() const { return kStateSize; }
  std::size_t action_count() const { return kActionCount; }

  std::vector<double> reset(Rng& rng) {
    const std::size_t len = std::min(options_.episode_length, frame_.size());
    start_ = options_.random_start ? rng.index(frame_.size() - len + 1) : 0;
    end_ = start_ + len;
    tick_ = start_;
    ClusterConfig c = config_;
    if (options_.random_initial_vms) {
      const std::size_t lo = std::max(c.min_vms, c.n_nodes);
      c.initial_vms = lo + rng.index(c.max_vms() - lo + 1);
    }
    state_ = init_cluster(c);
    history_.clear();
    return encode();
  }

  EnvStep step(std::size_t action_id) {
    if (tick_ >= end_) throw RuntimeError("step called on a finished episode");
    auto [next, obs] = cloudalloc::step(std::move(state_), tick_demand(frame_, tick_, config_), Action::from_id(action_id));
    state_ = std::move(next);
    EnvStep r;
    r.reward = reward_(obs, config_, encoder_.constraints());
    history_.push_back(std::move(obs));
    if (history_.size() > kRollingWindow) history_.erase(history_.begin());
    ++tick_;
    r.truncated = tick_ == end_;
    r.state = encode();
    return r;
  }

  const ClusterState& cluster() const { return state_; }

 private:
  std::vector<double> encode() const {
    const auto f = forecast_(std::min(tick_, frame_.size() - 1));
    return encoder_.encode(state_, history_, f, frame_, tick_);
  }

  const TraceFrame& frame_;
  ClusterConfig config_;
  ClusterStateEncoder encoder_;
  RewardModel reward_;
  ForecastProvider forecast_;
  ClusterEnvOptions options_;
  ClusterState state_;
  std::vector<StepObservation> history_;
  std::size_t start_ = 0, end_ = 0, tick_ = 0;
};

// Greedy policy driven by a trained network.
inline Policy greedy_policy(QNetwork network, ClusterStateEncoder encoder) {
  return [net = std::move(network), enc = std::move(encoder)](const PolicyContext& ctx) {
    const std::size_t n = std::min(ctx.history.size(), kRollingWindow);
    const std::span<const StepObservation> recent(ctx.history.data() + ctx.history.size() - n, n);
    const auto s = enc.encode(ctx.state, recent, ctx.forecast, ctx.frame, ctx.tick);
    return Decision{argmax(net.q(s)), std::nullopt};
  };
}

inline RewardFn episode_reward(RewardModel model, ConstraintSet constraints) {
  return [model, constraints](const StepObservation& obs, const ClusterState& state) {
    return model(obs, state.config, constraints);
  };
}

// ---------------------------------------------------------------------------
// Baselines

enum class SchedulerBaseline { static_allocation, threshold_reactive };

inline SchedulerBaseline parse_scheduler_baseline(const std::string& name) {
  if (name == "static") return SchedulerBaseline::static_allocation;
  if (name == "threshold_reactive") return SchedulerBaseline::threshold_reactive;
  throw ValidationError("unknown baseline policy '" + name + "' (expected static or threshold_reactive)");
}

inline constexpr std::size_t kReservationLeadTicks = 3;
inline constexpr double kContractBelowUtil = 0.4;

inline Policy baseline_policy(SchedulerBaseline kind, ConstraintSet constraints = {}) {
  if (kind == SchedulerBaseline::static_allocation) return [](const PolicyContext&) { return Decision{}; };
  return [constraints](const PolicyContext& ctx) {
    const auto& s = ctx.state;
    const double vm_cpu = s.config.vm_cpu;
    const double capacity = static_cast<double>(s.active_vms() + s.pending_vms()) * vm_cpu;
    Decision d;
    if (ctx.forecast.size() >= kReservationLeadTicks) {
      const double need = ctx.forecast[kReservationLeadTicks - 1];
      if (capacity > 0.0 && need / capacity > constraints.cpu_max) {
        const double vms = std::ceil(need / constraints.cpu_max / vm_cpu - capacity / vm_cpu);
        d.reservation = Reservation{ctx.tick + kReservationLeadTicks, static_cast<std::size_t>(std::max(vms, 1.0))};
      }
    }
    const double current = ctx.history.empty() ? s.cluster_cpu_util() : ctx.history.back().cpu_util;
    const double predicted = ctx.forecast.empty() || capacity <= 0.0 ? current : ctx.forecast.front() / capacity;
    if (predicted > constraints.cpu_max)
      d.action_id = Action::expand(1).id();
    else if (s.imbalance() > constraints.max_node_imbalance)
      d.action_id = Action::migrate(1).id();
    else if (current < kContractBelowUtil)
      d.action_id = Action::contract(1).id();
    return d;
  };
}

// ---------------------------------------------------------------------------
// Reward-weight grid search

inline std::vector<RewardWeights> simplex_grid(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw ValidationError("grid step must lie in (0,1]");
  const auto n = static_cast<int>(std::lround(1.0 / step));
  if (std::abs(n * step - 1.0) > 1e-9) throw ValidationError("grid step must divide 1");
  std::vector<RewardWeights> out;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; i + j <= n; ++j) {
      const int k = n - i - j;
      out.emplace_back(static_cast<double>(i) / n, static_cast<double>(j) / n, static_cast<double>(k) / n);
    }
  return out;
}

struct GridSearchRow {
  RewardWeights weights;
  double score = 0.0;
};

struct GridSearchResult {
  RewardWeights best;
  double best_score = 0.0;
  std::vector<GridSearchRow> table;
};

// Higher score wins; the earliest candidate wins ties.
inline GridSearchResult grid_search_weights(const std::vector<RewardWeights>& candidates,
                                            const std::function<double(const RewardWeights&)>& score) {
  if (candidates.empty()) throw ValidationError("grid search needs at least one candidate");
  GridSearchResult r;
  for (const auto& w : candidates) {
    const double s = score(w);
    if (!std::isfinite(s)) throw RuntimeError("grid search score is not finite");
    r.table.push_back({w, s});
    if (r.table.size() == 1 || s > r.best_score) {
      r.best = w;
      r.best_score = s;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kAgentFormatVersion = 1;

struct AgentCheckpoint {
  QNetwork network;
  double epsilon_final = 0.05;
  double gamma = 0.95;
  RewardWeights weights;
};

inline nlohmann::json agent_to_json(AgentCheckpoint ckpt) {
  nlohmann::json j;
  j["format_version"] = kAgentFormatVersion;
  j["layer_sizes"] = ckpt.network.mlp.sizes();
  j["epsilon_final"] = ckpt.epsilon_final;
  j["gamma"] = ckpt.gamma;
  j["weights"] = ckpt.weights.values();
  j["tensors"] = tensors_to_json(ckpt.network.mlp.tensors("q."));
  return j;
}

inline AgentCheckpoint agent_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kAgentFormatVersion)
      throw ValidationError("unsupported agent checkpoint format_version " + std::to_string(version));
    const auto sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    Rng rng(0);
    AgentCheckpoint c;
    c.network.mlp = Mlp::init(sizes, rng);
    tensors_from_json(j.at("tensors"), c.network.mlp.tensors("q."));
    c.epsilon_final = j.at("epsilon_final").get<double>();
    c.gamma = j.at("gamma").get<double>();
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != 3) throw ValidationError("agent checkpoint weights must have three entries");
    c.weights = RewardWeights(w[0], w[1], w[2]);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed agent checkpoint: ") + e.what());
  }
}

inline void save_agent(const AgentCheckpoint& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path + "' for writing");
  out << agent_to_json(c).dump() << '\n';
}

inline AgentCheckpoint load_agent(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open agent checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return agent_from_json(j);
}

}  // namespace cloudalloc
