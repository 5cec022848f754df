#include <gtest/gtest.h>

#include <sstream>

#include "cloudalloc/optimize.hpp"

using namespace cloudalloc;

TEST(ObjectiveF, HandExamples) {
  EXPECT_EQ(objective_f({0.6, 0.0, 0.0}, ObjectiveWeights(1, 0, 0)), 0.6);
  EXPECT_NEAR(objective_f({0.7, 0.4, 0.99}, ObjectiveWeights(0.4, 0.3, 0.3)), 0.457, 1e-12);
  EXPECT_EQ(objective_f({0, 0, 0}, ObjectiveWeights(0.2, 0.5, 0.3)), 0.0);
}

TEST(ObjectiveF, LinearInCostWithSlopeMinusW2) {
  const ObjectiveWeights w(0.2, 0.5, 0.3);
  const double h = 1e-6;
  const double slope = (objective_f({0.5, 0.4 + h, 0.5}, w) - objective_f({0.5, 0.4 - h, 0.5}, w)) / (2 * h);
  EXPECT_NEAR(slope, -w.w2(), 1e-8);
  const double a = objective_f({0.5, 0.1, 0.5}, w), b = objective_f({0.5, 0.3, 0.5}, w), c = objective_f({0.5, 0.5, 0.5}, w);
  EXPECT_NEAR(b - a, c - b, 1e-15);
}

TEST(ObjectiveWeights, ProjectionOntoSimplex) {
  const ObjectiveWeights a(2, 1, 1);
  EXPECT_DOUBLE_EQ(a.w1(), 0.5);
  EXPECT_DOUBLE_EQ(a.w2(), 0.25);
  const ObjectiveWeights b(-1, 3, 1);
  EXPECT_EQ(b.w1(), 0.0);
  EXPECT_DOUBLE_EQ(b.w2(), 0.75);
  const ObjectiveWeights z(0, 0, 0);
  EXPECT_DOUBLE_EQ(z.w1(), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(z.w3(), 1.0 / 3.0);
}

namespace {
double sphere(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v * v;
  return s;
}
double rosenbrock(const std::vector<double>& x) {
  return 100 * (x[1] - x[0] * x[0]) * (x[1] - x[0] * x[0]) + (1 - x[0]) * (1 - x[0]);
}
}  // namespace

TEST(Pso, SphereTenDimensions) {
  PsoConfig c;
  c.bounds.assign(10, {-5, 5});
  c.seed = 7;
  const auto r = pso_minimize(sphere, c);
  EXPECT_LT(r.best_fitness, 1e-6);
  EXPECT_EQ(r.history.size(), 200u);
  EXPECT_DOUBLE_EQ(sphere(r.best_position), r.best_fitness);
}

TEST(Pso, RosenbrockTwoDimensions) {
  PsoConfig c;
  c.bounds.assign(2, {-2, 2});
  c.iterations = 500;
  c.seed = 3;
  EXPECT_LT(pso_minimize(rosenbrock, c).best_fitness, 1e-3);
}

TEST(Pso, ConstantFitness) {
  PsoConfig c;
  c.bounds.assign(3, {-1, 1});
  c.iterations = 5;
  const auto r = pso_minimize([](const std::vector<double>&) { return 3.0; }, c);
  EXPECT_EQ(r.best_fitness, 3.0);
  for (double v : r.best_position) EXPECT_TRUE(v >= -1 && v <= 1);
}

TEST(Pso, MonotoneBoundedDeterministic) {
  PsoConfig c;
  c.bounds = {{-3, 1}, {0.5, 2}, {-10, -9}};
  c.iterations = 60;
  c.seed = 11;
  std::vector<std::vector<double>> seen;
  auto f = [&seen](const std::vector<double>& x) {
    seen.push_back(x);
    return std::sin(3 * x[0]) + x[1] * x[1] + std::cos(x[2]);
  };
  const auto a = pso_minimize(f, c);
  for (std::size_t i = 1; i < a.history.size(); ++i) EXPECT_LE(a.history[i].best_fitness, a.history[i - 1].best_fitness);
  EXPECT_EQ(seen.size(), a.evaluations);
  for (const auto& x : seen)
    for (std::size_t d = 0; d < 3; ++d) {
      EXPECT_GE(x[d], c.bounds[d].lo);
      EXPECT_LE(x[d], c.bounds[d].hi);
    }
  const auto b = pso_minimize(f, c);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].best_fitness, b.history[i].best_fitness);
    EXPECT_EQ(a.history[i].best_position, b.history[i].best_position);
  }
}

TEST(Pso, NonFiniteFitnessNamesPosition) {
  PsoConfig c;
  c.bounds.assign(1, {0, 1});
  try {
    pso_minimize([](const std::vector<double>&) { return std::nan(""); }, c);
    FAIL();
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("position ["), std::string::npos);
  }
}

TEST(Pso, InvalidConfig) {
  PsoConfig c;
  EXPECT_THROW(pso_minimize(sphere, c), ValidationError);
  c.bounds = {{1, 1}};
  EXPECT_THROW(pso_minimize(sphere, c), ValidationError);
  c.bounds = {{0, 1}};
  c.swarm_size = 1;
  EXPECT_THROW(pso_minimize(sphere, c), ValidationError);
}

TEST(TuneWeights, RecoversCentroid) {
  const WeightHarness h = [](const ObjectiveWeights& w) {
    double d = 0;
    for (double v : w.values()) d += (v - 1.0 / 3.0) * (v - 1.0 / 3.0);
    return d;
  };
  const auto r = tune_objective_weights(h, default_weight_pso(5));
  for (double v : r.weights.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-3);
  EXPECT_EQ(r.weights.w1() + r.weights.w2() + r.weights.w3(), 1.0);
}

TEST(TuneWeights, DegenerateSingleCandidate) {
  PsoConfig c = default_weight_pso(1);
  c.swarm_size = 1;
  c.iterations = 1;
  c.initial_positions = {{0.2, 0.6, 0.2}};
  const auto r = tune_objective_weights([](const ObjectiveWeights& w) { return w.w2(); }, c);
  EXPECT_DOUBLE_EQ(r.weights.w1(), 0.2);
  EXPECT_DOUBLE_EQ(r.weights.w2(), 0.6);
  EXPECT_DOUBLE_EQ(r.score, 0.6);
}

TEST(TuneWeights, HarnessFailureCarriesWeights) {
  PsoConfig c = default_weight_pso(1);
  c.iterations = 1;
  try {
    tune_objective_weights([](const ObjectiveWeights&) -> double { throw RuntimeError("sim broke"); }, c);
    FAIL();
  } catch (const RuntimeError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("sim broke"), std::string::npos);
    EXPECT_NE(m.find("weights ["), std::string::npos);
  }
}

TEST(TuningLog, CsvColumns) {
  const auto r = tune_objective_weights([](const ObjectiveWeights& w) { return w.w1(); }, [] {
    auto c = default_weight_pso(2);
    c.iterations = 4;
    return c;
  }());
  std::stringstream ss;
  write_tuning_log(r.pso, ss);
  std::string line;
  std::getline(ss, line);
  EXPECT_EQ(line, "iteration,best_fitness,w1,w2,w3");
  int rows = 0;
  while (std::getline(ss, line)) ++rows;
  EXPECT_EQ(rows, 4);
}
