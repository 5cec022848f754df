#include <gtest/gtest.h>

#include <map>
#include <set>

#include "cloudalloc/agent.hpp"

using namespace cloudalloc;

namespace {

// Deterministic finite MDP with one-hot states; episodes are cut after a
// fixed length without terminal flags, so the agent sees the discounted
// infinite-horizon problem.
struct ToyMdp {
  std::vector<std::vector<std::size_t>> next;
  std::vector<std::vector<double>> rewards;
  std::size_t episode_length = 20;
  std::size_t s = 0, t = 0;

  std::size_t state_size() const { return next.size(); }
  std::size_t action_count() const { return next[0].size(); }
  std::vector<double> one_hot(std::size_t i) const {
    std::vector<double> v(state_size(), 0.0);
    v[i] = 1.0;
    return v;
  }
  std::vector<double> reset(Rng& rng) {
    s = rng.index(state_size());
    t = 0;
    return one_hot(s);
  }
  EnvStep step(std::size_t a) {
    EnvStep r;
    r.reward = rewards[s][a];
    s = next[s][a];
    ++t;
    r.truncated = t == episode_length;
    r.state = one_hot(s);
    return r;
  }
};

std::vector<std::vector<double>> value_iteration(const ToyMdp& m, double gamma) {
  const std::size_t S = m.state_size(), A = m.action_count();
  std::vector<std::vector<double>> q(S, std::vector<double>(A, 0.0));
  for (int it = 0; it < 2000; ++it) {
    auto nq = q;
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a) {
        const auto& qn = q[m.next[s][a]];
        nq[s][a] = m.rewards[s][a] + gamma * *std::max_element(qn.begin(), qn.end());
      }
    q = nq;
  }
  return q;
}

ToyMdp random_mdp(std::size_t S, std::size_t A, Rng& rng) {
  ToyMdp m;
  m.next.assign(S, std::vector<std::size_t>(A));
  m.rewards.assign(S, std::vector<double>(A));
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      m.next[s][a] = rng.index(S);
      m.rewards[s][a] = rng.uniform();
    }
  return m;
}

double action_gap(const std::vector<double>& q) {
  auto v = q;
  std::sort(v.rbegin(), v.rend());
  return v[0] - v[1];
}

AgentConfig toy_config(std::uint64_t seed) {
  AgentConfig c;
  c.gamma = 0.9;
  c.hidden = {32};
  c.total_steps = 4000;
  c.learning_rate = 0.01;
  c.batch_size = 32;
  c.learning_starts = 100;
  c.sync_interval = 100;
  c.buffer_capacity = 2000;
  c.seed = seed;
  return c;
}

std::size_t greedy(const QNetwork& q, const std::vector<double>& s) { return argmax(q.q(s)); }

MetricVector filled(double v) {
  MetricVector m;
  m.fill(v);
  return m;
}

}  // namespace

TEST(ActionSpace, BijectionOverSixteenIds) {
  std::set<std::pair<int, int>> seen;
  for (std::size_t id = 0; id < kActionCount; ++id) {
    const auto a = Action::from_id(id);
    EXPECT_TRUE(a.valid());
    EXPECT_EQ(a.id(), id);
    seen.insert({static_cast<int>(a.kind), a.level});
  }
  EXPECT_EQ(seen.size(), 16u);
  EXPECT_EQ(Action::from_id(1), Action::expand(1));
  EXPECT_EQ(Action::from_id(10), Action::contract(5));
  EXPECT_EQ(Action::from_id(15), Action::migrate(5));
  EXPECT_THROW(Action::from_id(16), ValidationError);
}

TEST(EncodeState, ConstantHistoryAndForecast) {
  const std::vector<MetricVector> h(20, filled(0.37));
  const std::vector<double> f(14, 0.37);
  const auto s = encode_state(h, f);
  ASSERT_EQ(s.size(), 42u);
  for (double v : s) EXPECT_DOUBLE_EQ(v, 0.37);
}

TEST(EncodeState, RollingMeanOfRamp) {
  std::vector<MetricVector> h;
  for (int t = 0; t < 30; ++t) h.push_back(filled(t));
  const auto s = encode_state(h, std::vector<double>{});
  double hand = 0;
  for (int t = 18; t < 30; ++t) hand += t;
  hand /= 12;
  for (std::size_t i = 0; i < 14; ++i) {
    EXPECT_EQ(s[i], 29.0);
    EXPECT_EQ(s[14 + i], 29.0);
    EXPECT_DOUBLE_EQ(s[28 + i], hand);
  }
}

TEST(EncodeState, ShortHistoryPadsWithFirstTick) {
  const std::vector<MetricVector> h{filled(1.0), filled(4.0)};
  const auto s = encode_state(h, std::vector<double>{0.5, 0.7});
  EXPECT_DOUBLE_EQ(s[28], (11 * 1.0 + 4.0) / 12.0);
  EXPECT_EQ(s[14], 0.5);
  EXPECT_EQ(s[15], 0.7);
  EXPECT_EQ(s[27], 0.7);
  EXPECT_THROW(encode_state(std::vector<MetricVector>{}, std::vector<double>{}), ValidationError);
}

TEST(Reward, HandExamples) {
  EXPECT_EQ(reward(0.7, 0.0, 0.0, RewardWeights(1, 0, 0)), 0.7);
  EXPECT_NEAR(reward(0.8, 0.9, 0.3, RewardWeights(0.5, 0.3, 0.2)), 0.61, 1e-12);
  EXPECT_EQ(reward(0, 0, 0, RewardWeights()), 0.0);
  EXPECT_THROW(reward(1.2, 0.5, 0.5, RewardWeights()), ValidationError);
  EXPECT_THROW(reward(0.5, -0.1, 0.5, RewardWeights()), ValidationError);
}

TEST(Reward, LinearScaling) {
  const RewardWeights w(0.3, 0.5, 0.2);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const double U = rng.uniform(), P = rng.uniform(), C = rng.uniform(), a = rng.uniform();
    EXPECT_NEAR(reward(a * U, a * P, a * C, w), a * reward(U, P, C, w), 1e-15);
  }
}

TEST(RewardWeights, NormalizedOnConstruction) {
  const RewardWeights w(2, 1, 1);
  EXPECT_EQ(w.w1(), 0.5);
  EXPECT_EQ(w.w3(), 0.25);
  EXPECT_THROW(RewardWeights(-1, 1, 1), ValidationError);
  EXPECT_THROW(RewardWeights(0, 0, 0), ValidationError);
}

TEST(SelectAction, GreedyAndTieBreak) {
  Rng rng(1);
  const std::vector<double> q{0.1, 0.9, 0.2, 0.0};
  EXPECT_EQ(select_action(q, 0.0, rng), 1u);
  EXPECT_EQ(select_action(std::vector<double>{0.5, 0.5, 0.5}, 0.0, rng), 0u);
  EXPECT_EQ(select_action(std::vector<double>{0.1, 0.7, 0.7}, 0.0, rng), 1u);
  std::vector<double> scaled = q;
  for (auto& v : scaled) v *= 37.5;
  EXPECT_EQ(select_action(scaled, 0.0, rng), select_action(q, 0.0, rng));
  EXPECT_THROW(select_action(q, 1.5, rng), ValidationError);
}

TEST(SelectAction, UniformExplorationPassesChiSquare) {
  const std::vector<double> q(16, 0.0);
  Rng a(99), b(99);
  std::vector<int> counts(16, 0);
  for (int i = 0; i < 16000; ++i) {
    const auto x = select_action(q, 1.0, a);
    EXPECT_EQ(x, select_action(q, 1.0, b));
    ++counts[x];
  }
  double chi2 = 0;
  for (int c : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
  EXPECT_LT(chi2, 30.578);  // 99th percentile, 15 degrees of freedom
}

TEST(SelectAction, NetworkScalingKeepsGreedyChoice) {
  Rng rng(2);
  auto q = QNetwork::init(5, {8}, 4, rng);
  auto scaled = q;
  for (auto& v : scaled.mlp.layers.back().weight.data) v *= 3.0;
  for (auto& v : scaled.mlp.layers.back().bias.data) v *= 3.0;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> s(5);
    for (auto& v : s) v = rng.uniform(-1, 1);
    EXPECT_EQ(select_action(q, s, 0.0, rng), select_action(scaled, s, 0.0, rng));
  }
}

TEST(DqnTarget, TrivialCases) {
  Rng rng(0);
  const auto net = QNetwork::init(2, {}, 2, rng);
  const std::vector<double> s{0.3, 0.1};
  EXPECT_EQ(dqn_target(1.0, s, true, net, net, 0.9), 1.0);
  EXPECT_EQ(dqn_target(0.5, s, false, net, net, 0.0), 0.5);
  EXPECT_THROW(dqn_target(0.5, s, false, net, net, 1.0), ValidationError);
}

TEST(DqnTarget, OnlineSelectsTargetEvaluates) {
  Rng rng(0);
  auto online = QNetwork::init(3, {}, 2, rng);
  auto target = QNetwork::init(3, {}, 2, rng);
  online.mlp.layers[0].weight.zero();
  target.mlp.layers[0].weight.zero();
  online.mlp.layers[0].bias.data = {0.2, 0.5};
  target.mlp.layers[0].bias.data = {0.7, 0.3};
  const std::vector<double> s{1, 2, 3};
  EXPECT_NEAR(dqn_target(1.0, s, false, online, target, 0.9), 1.27, 1e-12);
  EXPECT_NE(dqn_target(1.0, s, false, online, target, 0.9), 1.0 + 0.9 * 0.7);
}

TEST(ReplayBuffer, FifoEviction) {
  ReplayBuffer buf(5);
  for (std::size_t i = 0; i < 8; ++i) buf.push({{double(i)}, i % 16, 0.0, {0.0}, false});
  EXPECT_EQ(buf.size(), 5u);
  const auto c = buf.contents();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(c[i].state[0], double(i + 3));
  Rng rng(1);
  for (const auto* t : buf.sample(100, rng)) EXPECT_GE(t->state[0], 3.0);
  EXPECT_THROW(ReplayBuffer(0), ValidationError);
}

TEST(TrainAgent, ZeroStepsReturnsInitialization) {
  ToyMdp m{{{0, 1}, {0, 1}}, {{1, 0}, {1, 0}}};
  auto cfg = toy_config(3);
  cfg.total_steps = 0;
  const auto r = train_agent(m, cfg);
  Rng init(derive_seed(3, 0));
  EXPECT_EQ(r.network, QNetwork::init(2, cfg.hidden, 2, init));
  EXPECT_TRUE(r.log.episode_returns.empty());
}

TEST(TrainAgent, TwoStateToy) {
  ToyMdp m{{{0, 1}, {0, 1}}, {{1, 0}, {1, 0}}};
  const auto r = train_agent(m, toy_config(7));
  EXPECT_EQ(greedy(r.network, {1, 0}), 0u);
  EXPECT_EQ(greedy(r.network, {0, 1}), 0u);
}

TEST(TrainAgent, Deterministic) {
  ToyMdp m{{{0, 1}, {0, 1}}, {{1, 0}, {1, 0}}};
  auto cfg = toy_config(5);
  cfg.total_steps = 600;
  const auto a = train_agent(m, cfg), b = train_agent(m, cfg);
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(a.network, b.network);
  cfg.seed = 6;
  EXPECT_NE(train_agent(m, cfg).log, a.log);
}

TEST(TrainAgent, EpsilonScheduleReachesFloorAtHalfway) {
  AgentConfig c;
  c.total_steps = 1000;
  EXPECT_EQ(c.epsilon_at(0), 1.0);
  EXPECT_NEAR(c.epsilon_at(250), 0.525, 1e-12);
  EXPECT_NEAR(c.epsilon_at(500), 0.05, 1e-12);
  EXPECT_NEAR(c.epsilon_at(999), 0.05, 1e-12);
}

TEST(TrainAgent, DivergenceRaises) {
  ToyMdp m{{{0, 1}, {0, 1}}, {{1e200, 0}, {1e200, 0}}};
  auto cfg = toy_config(1);
  cfg.total_steps = 400;
  cfg.gradient_clip = 0;
  EXPECT_THROW(train_agent(m, cfg), RuntimeError);
}

TEST(TrainAgent, MatchesValueIterationOnSmallMdps) {
  Rng gen(2024);
  int tested = 0;
  while (tested < 6) {
    const std::size_t S = 2 + gen.index(3), A = 2 + gen.index(3);
    const auto m = random_mdp(S, A, gen);
    const auto q = value_iteration(m, 0.9);
    bool clear = true;
    for (const auto& row : q) clear = clear && action_gap(row) > 0.15;
    if (!clear) continue;
    ++tested;
    ToyMdp env = m;
    const auto r = train_agent(env, toy_config(100 + tested));
    for (std::size_t s = 0; s < S; ++s)
      EXPECT_EQ(greedy(r.network, m.one_hot(s)), argmax(q[s])) << "mdp " << tested << " state " << s;
  }
}

TEST(GridSearch, SimplexGridMatchesEnumeration) {
  const auto grid = simplex_grid(0.1);
  std::size_t count = 0;
  for (int i = 0; i <= 10; ++i)
    for (int j = 0; j <= 10; ++j)
      for (int k = 0; k <= 10; ++k)
        if (i + j + k == 10) ++count;
  EXPECT_EQ(count, 66u);
  EXPECT_EQ(grid.size(), count);
  for (const auto& w : grid) EXPECT_NEAR(w.w1() + w.w2() + w.w3(), 1.0, 1e-12);
}

TEST(GridSearch, SingleCandidateAndTable) {
  const auto one = grid_search_weights({RewardWeights(0.2, 0.3, 0.5)}, [](const RewardWeights&) { return -4.0; });
  EXPECT_EQ(one.best, RewardWeights(0.2, 0.3, 0.5));
  const auto grid = simplex_grid(0.1);
  const auto r = grid_search_weights(grid, [](const RewardWeights& w) { return w.w1() - (w.w2() - 0.3) * (w.w2() - 0.3); });
  EXPECT_EQ(r.table.size(), 66u);
  for (const auto& row : r.table) EXPECT_TRUE(std::isfinite(row.score));
  EXPECT_NEAR(r.best.w1(), 1.0, 1e-12);
}

namespace {
struct ContextFixture {
  ClusterState state;
  TraceFrame frame = TraceFrame::with_canonical_columns(300);
  std::vector<StepObservation> history;
  Rng rng{0};
  ContextFixture() {
    ClusterConfig c;
    c.n_nodes = 2;
    c.initial_vms = 8;
    c.min_vms = 2;
    state = init_cluster(c);
  }
  PolicyContext ctx(std::size_t tick, std::vector<double> forecast) {
    return PolicyContext{state, frame, tick, history, std::move(forecast), rng};
  }
};
}  // namespace

TEST(Baselines, StaticAlwaysNoop) {
  ContextFixture f;
  const auto p = baseline_policy(SchedulerBaseline::static_allocation);
  EXPECT_EQ(p(f.ctx(0, {7.5, 7.5, 7.5})).action_id, 0u);
  EXPECT_FALSE(p(f.ctx(0, {7.5})).reservation);
}

TEST(Baselines, ThresholdMigratesOnImbalance) {
  ContextFixture f;
  f.state.nodes[0].cpu_used = 0.75 * 4;
  f.state.nodes[1].cpu_used = 0.45 * 4;
  StepObservation o;
  o.cpu_util = 0.6;
  f.history.push_back(o);
  const auto d = baseline_policy(SchedulerBaseline::threshold_reactive)(f.ctx(5, {4.8, 4.8, 4.8}));
  EXPECT_EQ(d.action_id, Action::migrate(1).id());
  EXPECT_FALSE(d.reservation);
}

TEST(Baselines, ThresholdBooksReservationThreeTicksAhead) {
  ContextFixture f;
  StepObservation o;
  o.cpu_util = 0.6;
  f.history.push_back(o);
  const auto d = baseline_policy(SchedulerBaseline::threshold_reactive)(f.ctx(10, {4.8, 5.0, 7.2}));
  ASSERT_TRUE(d.reservation);
  EXPECT_EQ(d.reservation->activation_tick, 13u);
  EXPECT_EQ(d.reservation->vms, 1u);  // ceil(7.2 / 0.85 - 8)
  EXPECT_EQ(d.action_id, 0u);
  const auto e = baseline_policy(SchedulerBaseline::threshold_reactive)(f.ctx(10, {7.2, 7.2, 7.2}));
  EXPECT_EQ(e.action_id, Action::expand(1).id());
  o.cpu_util = 0.2;
  f.history.back() = o;
  EXPECT_EQ(baseline_policy(SchedulerBaseline::threshold_reactive)(f.ctx(10, {1.6, 1.6, 1.6})).action_id,
            Action::contract(1).id());
}

TEST(ClusterEnv, StatesAreFiniteAndSized) {
  WorkloadSpec spec;
  spec.duration_ticks = 400;
  spec.seed = 3;
  const auto frame = generate_workload(spec);
  ClusterConfig c;
  ClusterEnv env(frame, c, {}, RewardModel{}, {}, {100, true, true});
  Rng rng(1);
  auto s = env.reset(rng);
  for (int t = 0; t < 100; ++t) {
    ASSERT_EQ(s.size(), kStateSize);
    for (double v : s) ASSERT_TRUE(std::isfinite(v));
    auto r = env.step(rng.index(kActionCount));
    EXPECT_TRUE(std::isfinite(r.reward));
    EXPECT_EQ(r.truncated, t == 99);
    s = r.state;
  }
  EXPECT_THROW(env.step(0), RuntimeError);
}

TEST(ClusterEnv, GreedyPolicyMatchesEnvironmentEncoding) {
  WorkloadSpec spec;
  spec.duration_ticks = 60;
  const auto frame = generate_workload(spec);
  ClusterConfig c;
  Rng rng(8);
  const auto net = QNetwork::init(kStateSize, {16}, kActionCount, rng);
  ClusterEnv env(frame, c, {}, RewardModel{}, {}, {60, false, false});
  Rng r0(0);
  auto s = env.reset(r0);
  std::vector<std::size_t> env_actions;
  for (int t = 0; t < 60; ++t) {
    env_actions.push_back(argmax(net.q(s)));
    s = env.step(env_actions.back()).state;
  }
  const auto trace = run_episode(frame, greedy_policy(net, ClusterStateEncoder(c, {})), {}, c, 0);
  for (std::size_t t = 0; t < 60; ++t) EXPECT_EQ(trace.rows[t].action_id, env_actions[t]) << t;
}

TEST(AgentCheckpoint, RoundTrip) {
  Rng rng(4);
  AgentCheckpoint c{QNetwork::init(kStateSize, {64, 64}, kActionCount, rng), 0.05, 0.95, RewardWeights(0.5, 0.3, 0.2)};
  const auto back = agent_from_json(nlohmann::json::parse(agent_to_json(c).dump()));
  EXPECT_EQ(back.network, c.network);
  EXPECT_EQ(back.weights, c.weights);
  EXPECT_EQ(back.gamma, 0.95);
  auto j = agent_to_json(c);
  j["format_version"] = 2;
  EXPECT_THROW(agent_from_json(j), ValidationError);
}
