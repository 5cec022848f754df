#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cloudalloc/agent.hpp"
#include "cloudalloc/forecast.hpp"
#include "cloudalloc/optimize.hpp"
#include "cloudalloc/report.hpp"
#include "cloudalloc/simenv.hpp"

namespace cloudalloc {

// Demand forecasts (cores) for ticks [first, last) of `raw`, computed once by a
// request-rate model reading windows of the aligned normalized frame. Ticks
// without a full window fall back to persistence. The provider is indexed from
// `first`.
inline ForecastProvider model_forecast(const ForecastModel& model, const TraceFrame& raw, const TraceFrame& normalized,
                                       std::size_t window_len, const ClusterConfig& config, std::size_t first,
                                       std::size_t last) {
  if (model.target_metric != "request_rate")
    throw ValidationError("forecast model predicts '" + model.target_metric +
                          "'; driving the simulator needs a request_rate model");
  if (!model.scaler) throw ValidationError("forecast model carries no scaler");
  if (normalized.size() != raw.size() || (!raw.empty() && normalized.timestamps.front() != raw.timestamps.front()))
    throw ValidationError("preprocessed trace is not aligned with the raw trace");
  last = std::min(last, raw.size());
  const auto rows = canonical_rows(normalized);
  const std::size_t target_col = model.scaler->index_of("request_rate");
  auto table = std::make_shared<std::vector<std::vector<double>>>();
  table->reserve(last > first ? last - first : 0);
  for (std::size_t t = first; t < last; ++t) {
    std::vector<double> f;
    if (window_len > 0 && t + 1 >= window_len) {
      const std::span<const double> window(rows.data() + (t + 1 - window_len) * kFeatureCount, window_len * kFeatureCount);
      f = forward(model, window);
      for (auto& v : f) v = std::max(model.scaler->inverse(target_col, v), 0.0) * config.work_per_request;
    } else {
      f.assign(model.horizon, offered_load(raw, t, config.work_per_request));
    }
    table->push_back(std::move(f));
  }
  if (table->empty()) throw ValidationError("forecast range is empty");
  return [table](std::size_t tick) {
    return (*table)[std::min(tick, table->size() - 1)];
  };
}

// Shifts a provider so that tick 0 of the result reads tick `offset` of `inner`.
inline ForecastProvider shifted_forecast(ForecastProvider inner, std::size_t offset) {
  return [inner = std::move(inner), offset](std::size_t tick) { return inner(tick + offset); };
}

// One-step lookahead on the utilization / cost / quality objective: picks the
// expand or contract level whose projected next tick scores highest.
inline Policy objective_policy(ObjectiveWeights weights, ConstraintSet constraints) {
  return [weights, constraints](const PolicyContext& ctx) {
    const auto& s = ctx.state;
    const auto& cfg = s.config;
    if (s.imbalance() > constraints.max_node_imbalance) return Decision{Action::migrate(1).id(), std::nullopt};
    const double demand = ctx.forecast.empty() ? (ctx.history.empty() ? 0.0 : ctx.history.back().demand)
                                               : ctx.forecast.front();
    const double max_vms = static_cast<double>(cfg.max_vms());
    const auto base = static_cast<long>(s.active_vms() + s.pending_vms());
    Decision best;
    double best_f = -1e300;
    for (std::size_t id = 0; id < 11; ++id) {
      const auto a = Action::from_id(id);
      long vms = base;
      if (a.kind == ActionKind::expand) vms += a.level;
      if (a.kind == ActionKind::contract) vms -= a.level;
      if (vms < static_cast<long>(std::max(cfg.min_vms, std::size_t{1})) || vms > static_cast<long>(cfg.max_vms())) continue;
      const double cap = static_cast<double>(vms) * cfg.vm_cpu;
      const double u = demand / cap;
      ObjectiveInputs in;
      in.utilization = std::min(u, 1.0);
      in.cost = static_cast<double>(vms) / max_vms;
      in.quality = u >= 1.0 ? 0.0
                            : 1.0 - std::min(latency_model(u, cfg.base_latency_ms) / constraints.p99_latency_max, 1.0);
      const double f = objective_f(in, weights);
      if (f > best_f) {
        best_f = f;
        best.action_id = id;
      }
    }
    return best;
  };
}

inline constexpr double kSlaPenalty = 10.0;

// Normalized cost plus a weighted SLA-miss rate; lower is better.
inline double sla_penalized_cost(const EpisodeTrace& trace, const ClusterConfig& config, const ConstraintSet& constraints) {
  if (trace.rows.empty()) throw ValidationError("cannot score an empty episode");
  double vms = 0.0;
  std::vector<double> lat;
  for (const auto& r : trace.rows) {
    vms += static_cast<double>(r.active_vms);
    lat.push_back(r.latency_ms);
  }
  const double cost = vms / (static_cast<double>(trace.size()) * static_cast<double>(config.max_vms()));
  return cost + kSlaPenalty * (1.0 - sla_rate(lat, constraints.p99_latency_max));
}

inline WeightHarness simulation_weight_harness(const TraceFrame& frame, ClusterConfig config, ConstraintSet constraints,
                                               ForecastProvider forecast, std::uint64_t seed) {
  return [&frame, config, constraints, forecast, seed](const ObjectiveWeights& w) {
    EpisodeOptions opt;
    opt.policy_name = "objective";
    opt.forecast = forecast;
    const auto trace = run_episode(frame, objective_policy(w, constraints), constraints, config, seed, opt);
    return sla_penalized_cost(trace, config, constraints);
  };
}

// Equal-weight objective on a finished run: mean utilization, mean
// provisioned fraction as cost, SLA rate as quality.
inline double equal_weight_score(const EpisodeTrace& trace, const ClusterConfig& config, const ConstraintSet& constraints) {
  const auto r = build_report(trace, constraints, CostRates{0, 0, 0, 0});
  ObjectiveInputs in;
  in.utilization = std::clamp(r.avg_cpu_util, 0.0, 1.0);
  in.cost = std::clamp(r.avg_active_vms / static_cast<double>(config.max_vms()), 0.0, 1.0);
  in.quality = r.sla_rate;
  return objective_f(in, ObjectiveWeights(1, 1, 1));
}

struct AgentSetup {
  ClusterConfig cluster;
  ConstraintSet constraints;
  RewardModel reward;
  AgentConfig agent;
  ClusterEnvOptions env;
};

inline AgentTrainResult train_cluster_agent(const TraceFrame& train_frame, const AgentSetup& setup,
                                            ForecastProvider forecast) {
  ClusterEnv env(train_frame, setup.cluster, setup.constraints, setup.reward, std::move(forecast), setup.env);
  return train_agent(env, setup.agent);
}

inline EpisodeTrace run_agent(const TraceFrame& frame, const QNetwork& net, const AgentSetup& setup,
                              ForecastProvider forecast, std::uint64_t seed, const std::string& name = "dqn") {
  EpisodeOptions opt;
  opt.policy_name = name;
  opt.forecast = std::move(forecast);
  opt.reward = episode_reward(setup.reward, setup.constraints);
  return run_episode(frame, greedy_policy(net, ClusterStateEncoder(setup.cluster, setup.constraints)), setup.constraints,
                     setup.cluster, seed, opt);
}

// Trains one short agent per candidate on `train_frame` (identical seeds) and
// scores its greedy run on `holdout` with the equal-weight objective.
inline GridSearchResult grid_search_reward_weights(const std::vector<RewardWeights>& candidates,
                                                   const TraceFrame& train_frame, const TraceFrame& holdout,
                                                   AgentSetup setup, const ForecastProvider& train_forecast,
                                                   const ForecastProvider& holdout_forecast, std::uint64_t seed) {
  return grid_search_weights(candidates, [&](const RewardWeights& w) {
    AgentSetup s = setup;
    s.reward.weights = w;
    const auto trained = train_cluster_agent(train_frame, s, train_forecast);
    const auto trace = run_agent(holdout, trained.network, s, holdout_forecast, seed);
    return equal_weight_score(trace, s.cluster, s.constraints);
  });
}

}  // namespace cloudalloc
