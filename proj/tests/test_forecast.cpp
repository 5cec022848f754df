#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cloudalloc/forecast.hpp"

using namespace cloudalloc;

namespace {

struct ToyBatch {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> targets;
  std::vector<ForecastSample> samples() const {
    std::vector<ForecastSample> s;
    for (std::size_t i = 0; i < inputs.size(); ++i) s.push_back({inputs[i], targets[i]});
    return s;
  }
};

ToyBatch toy_batch(std::size_t n, std::size_t steps, std::size_t in, std::size_t horizon, std::uint64_t seed) {
  Rng rng(seed);
  ToyBatch b;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(steps * in), y(horizon);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : y) v = rng.uniform(-1, 1);
    b.inputs.push_back(x);
    b.targets.push_back(y);
  }
  return b;
}

// Worst relative error between analytic gradients and central differences.
double gradient_check(ForecastModel model, const ToyBatch& batch, double eps = 1e-5) {
  const auto samples = batch.samples();
  const auto analytic = loss_and_gradients(model, samples);
  auto grads = const_cast<ForecastModel&>(analytic.gradients).tensors();
  auto params = model.tensors();
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t k = 0; k < params[t].second->size(); ++k) {
      double& p = params[t].second->data[k];
      const double saved = p;
      p = saved + eps;
      const double up = loss_and_gradients(model, samples).loss;
      p = saved - eps;
      const double down = loss_and_gradients(model, samples).loss;
      p = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = grads[t].second->data[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST(InitModel, DefaultArchitectureShapesChain) {
  const auto m = init_model({128, 256, 128}, 12, 1);
  ASSERT_EQ(m.lstm.size(), 3u);
  EXPECT_EQ(m.lstm[0].input_size, 14u);
  EXPECT_EQ(m.lstm[0].w.rows, 4u * 128u);
  EXPECT_EQ(m.lstm[1].input_size, 128u);
  EXPECT_EQ(m.lstm[1].hidden_size, 256u);
  EXPECT_EQ(m.lstm[2].input_size, 256u);
  EXPECT_EQ(m.head.sizes(), (std::vector<std::size_t>{128, 64, 32, 12}));
}

TEST(InitModel, DeterministicAndForgetBiasOne) {
  const auto a = init_model({8, 8}, 4, 3);
  const auto b = init_model({8, 8}, 4, 3);
  const auto c = init_model({8, 8}, 4, 4);
  EXPECT_TRUE(a.same_parameters(b));
  EXPECT_FALSE(a.same_parameters(c));
  for (const auto& l : a.lstm) {
    for (std::size_t k = l.hidden_size; k < 2 * l.hidden_size; ++k) EXPECT_EQ(l.b.data[k], 1.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.input_size + l.hidden_size));
    for (double v : l.w.data) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(InitModel, RejectsZeroSizes) {
  EXPECT_THROW(init_model({8, 0}, 4, 1), ValidationError);
  EXPECT_THROW(init_model(std::vector<std::size_t>{}, 4, 1), ValidationError);
}

TEST(Forward, ZeroWeightsYieldOutputBias) {
  auto m = init_model({4, 4}, 3, 1);
  for (auto& [_, t] : m.tensors()) t->zero();
  auto& out_bias = m.head.layers.back().bias.data;
  out_bias = {0.25, -1.5, 2.0};
  const std::vector<double> window(24 * 14, 0.7);
  EXPECT_EQ(forward(m, window), out_bias);
}

TEST(Forward, InferenceDeterministicAndHorizonLength) {
  const auto m = init_model({6, 5}, 7, 2);
  const auto batch = toy_batch(1, 10, 14, 7, 1);
  const auto a = forward(m, batch.inputs[0]);
  EXPECT_EQ(a, forward(m, batch.inputs[0]));
  EXPECT_EQ(a.size(), 7u);
  // training mode draws dropout masks
  EXPECT_NE(forward(m, batch.inputs[0], true, 5), a);
  EXPECT_EQ(forward(m, batch.inputs[0], true, 5), forward(m, batch.inputs[0], true, 5));
}

TEST(Forward, ShapeMismatchNamesSizes) {
  const auto m = init_model({4}, 2, 1);
  const std::vector<double> bad(15, 0.0);
  try {
    forward(m, bad);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("14"), std::string::npos);
  }
}

TEST(Gradients, SingleUnitTwoStepMatchesFiniteDifferences) {
  ForecastArchitecture arch{2, {1}, {}, 1, 0.0};
  const auto m = init_model(arch, 9);
  EXPECT_LT(gradient_check(m, toy_batch(3, 2, 2, 1, 4)), 1e-4);
}

TEST(Gradients, StackedToyModelMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ForecastArchitecture arch{3, {4, 3}, {3}, 2, 0.0};
    const auto m = init_model(arch, seed);
    EXPECT_LT(gradient_check(m, toy_batch(2, 3, 3, 2, seed + 10)), 1e-4) << "seed " << seed;
  }
}

TEST(Gradients, PerfectPredictionGivesZeroLoss) {
  const auto m = init_model({3}, 2, 5);
  auto batch = toy_batch(2, 4, 14, 2, 6);
  for (std::size_t i = 0; i < 2; ++i) batch.targets[i] = forward(m, batch.inputs[i]);
  const auto lg = loss_and_gradients(m, batch.samples());
  EXPECT_EQ(lg.loss, 0.0);
  for (double g : lg.gradients.head.layers.back().bias.data) EXPECT_EQ(g, 0.0);
}

TEST(Gradients, DoubledResidualQuadruplesLoss) {
  const auto m = init_model({3}, 2, 5);
  auto batch = toy_batch(2, 4, 14, 2, 6);
  const auto base = loss_and_gradients(m, batch.samples()).loss;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto p = forward(m, batch.inputs[i]);
    for (std::size_t k = 0; k < 2; ++k) batch.targets[i][k] = p[k] - 2.0 * (p[k] - batch.targets[i][k]);
  }
  EXPECT_NEAR(loss_and_gradients(m, batch.samples()).loss, 4.0 * base, 1e-12);
}

TEST(Schedule, CosineEndpointsAndMonotone) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 0.001, 1e-5), 0.001);
  EXPECT_DOUBLE_EQ(cosine_lr(100, 100, 0.001, 1e-5), 1e-5);
  for (std::size_t e = 1; e <= 100; ++e) EXPECT_LE(cosine_lr(e, 100, 0.001, 1e-5), cosine_lr(e - 1, 100, 0.001, 1e-5));
}

namespace {

TraceFrame sine_frame(std::size_t n) {
  TraceFrame f = TraceFrame::with_canonical_columns(300);
  for (std::size_t t = 0; t < n; ++t) {
    f.timestamps.push_back(static_cast<std::int64_t>(t) * 300);
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(t) / 24.0;
    for (std::size_t c = 0; c < kFeatureCount; ++c) f.columns[c].push_back(0.5 + 0.4 * std::sin(phase + 0.1 * c));
  }
  return f;
}

}  // namespace

TEST(Train, ConvergesOnNoiselessSine) {
  const auto data = make_windows(sine_frame(160), 12, 3, "cpu_util");
  ForecastArchitecture arch{14, {6}, {8}, 3, 0.0};
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.initial_lr = 0.02;
  cfg.lr_min = 0.001;
  cfg.batch_size = 16;
  cfg.seed = 3;
  const auto r = train(init_model(arch, 1), data, cfg);
  ASSERT_EQ(r.loss_curve.size(), 200u);
  EXPECT_LT(r.loss_curve.back(), 0.1 * r.loss_curve.front());
  for (std::size_t e = 1; e < r.learning_rates.size(); ++e) EXPECT_LE(r.learning_rates[e], r.learning_rates[e - 1]);
}

TEST(Train, ZeroEpochsReturnsModelUnchangedAndSeedsReproduce) {
  const auto data = make_windows(sine_frame(60), 12, 3, "cpu_util");
  ForecastArchitecture arch{14, {4}, {4}, 3, 0.3};
  const auto init = init_model(arch, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_TRUE(train(init, data, cfg).model.same_parameters(init));
  cfg.epochs = 3;
  cfg.seed = 5;
  EXPECT_EQ(train(init, data, cfg).loss_curve, train(init, data, cfg).loss_curve);
}

TEST(Train, DivergenceReported) {
  const auto data = make_windows(sine_frame(60), 12, 3, "cpu_util");
  ForecastArchitecture arch{14, {4}, {4}, 3, 0.0};
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.initial_lr = 1e200;
  cfg.gradient_clip = 0.0;
  EXPECT_THROW(train(init_model(arch, 1), data, cfg), RuntimeError);
}

TEST(Metrics, HandComputedValues) {
  const std::vector<double> p{1, 2}, t{2, 4};
  const auto m = compute_metrics(p, t);
  EXPECT_NEAR(m.rmse, std::sqrt(2.5), 1e-12);
  EXPECT_NEAR(m.mape_percent(), 50.0, 1e-12);
  const auto perfect = compute_metrics(t, t);
  EXPECT_EQ(perfect.rmse, 0.0);
  EXPECT_EQ(perfect.mape_percent(), 0.0);
}

TEST(Metrics, ZeroTargetsExcluded) {
  const std::vector<double> p{1, 2, 3}, t{0, 4, 3};
  const auto m = compute_metrics(p, t);
  EXPECT_EQ(m.n_excluded_zero_targets, 1u);
  EXPECT_EQ(m.n_evaluated, 3u);
  EXPECT_NEAR(m.mape_percent(), 25.0, 1e-12);
  const std::vector<double> zeros{0, 0};
  const auto z = compute_metrics(std::vector<double>{1, 1}, zeros);
  EXPECT_EQ(z.rmse, 1.0);
  EXPECT_THROW(z.mape_percent(), ValidationError);
}

TEST(Baselines, PersistenceAndMovingAverage) {
  const std::vector<double> w{0.1, 0.3, 0.6, 0.9};
  EXPECT_EQ(baseline_predict({BaselineKind::persistence}, w, 3), (std::vector<double>{0.9, 0.9, 0.9}));
  const auto ma = baseline_predict({BaselineKind::moving_average, 3}, w, 2);
  EXPECT_NEAR(ma[0], 0.6, 1e-15);
  EXPECT_EQ(ma[0], ma[1]);
  EXPECT_THROW(baseline_predict({BaselineKind::moving_average, 0}, w, 2), ValidationError);
  EXPECT_THROW(baseline_predict({BaselineKind::moving_average, 5}, w, 2), ValidationError);
}

TEST(Checkpoint, RoundTripAndVersionCheck) {
  ForecastArchitecture arch{14, {5, 4}, {6}, 3, 0.2};
  auto m = init_model(arch, 8);
  m.target_metric = "request_rate";
  m.scaler = ScalerParams{{"request_rate"}, {0.0}, {1000.0}};
  const auto path = (std::filesystem::temp_directory_path() / "cloudalloc_ckpt_test.json").string();
  save_checkpoint(m, path);
  const auto back = load_checkpoint(path);
  EXPECT_TRUE(back.same_parameters(m));
  EXPECT_EQ(back.target_metric, "request_rate");
  EXPECT_EQ(back.dense_sizes(), (std::vector<std::size_t>{6}));
  EXPECT_EQ(*back.scaler, *m.scaler);
  std::filesystem::remove(path);

  auto j = checkpoint_to_json(m);
  j["format_version"] = 99;
  EXPECT_THROW(checkpoint_from_json(j), ValidationError);
}

TEST(Inference, InverseTransformedOutputIsFinite) {
  const auto m = init_model({4}, 3, 2);
  ScalerParams s{{"cpu_util"}, {0.2}, {0.9}};
  const auto batch = toy_batch(5, 8, 14, 3, 2);
  for (const auto& in : batch.inputs)
    for (double v : forward(m, in)) EXPECT_TRUE(std::isfinite(s.inverse(0, v)));
}
