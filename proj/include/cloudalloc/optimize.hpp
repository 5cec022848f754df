#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cloudalloc/common.hpp"
#include "cloudalloc/random.hpp"

namespace cloudalloc {

// Weights of the utilization / cost / quality objective. Always on the simplex.
class ObjectiveWeights {
 public:
  ObjectiveWeights() = default;
  ObjectiveWeights(double w1, double w2, double w3) : w_(project({w1, w2, w3})) {}

  double w1() const { return w_[0]; }
  double w2() const { return w_[1]; }
  double w3() const { return w_[2]; }
  const std::array<double, 3>& values() const { return w_; }

  // Negative parts clipped to zero, then normalized; all-zero maps to the centroid.
  static std::array<double, 3> project(std::array<double, 3> w) {
    double sum = 0.0;
    for (auto& v : w) {
      if (!(v > 0.0)) v = 0.0;
      sum += v;
    }
    if (!(sum > 0.0) || !std::isfinite(sum)) return {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    for (auto& v : w) v /= sum;
    return w;
  }

  bool operator==(const ObjectiveWeights&) const = default;

 private:
  std::array<double, 3> w_{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
};

struct ObjectiveInputs {
  double utilization = 0.0;  // U
  double cost = 0.0;         // C, normalized
  double quality = 0.0;      // Q

  void validate() const {
    for (double v : {utilization, cost, quality})
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("objective inputs must lie in [0,1]");
  }
};

inline double objective_f(const ObjectiveInputs& in, const ObjectiveWeights& w) {
  return w.w1() * in.utilization - w.w2() * in.cost + w.w3() * in.quality;
}

// ---------------------------------------------------------------------------
// Particle swarm

struct Bounds {
  double lo = 0.0;
  double hi = 1.0;
};

struct PsoConfig {
  std::size_t swarm_size = 30;
  std::size_t iterations = 200;
  double inertia = 0.72;
  double cognitive = 1.49;
  double social = 1.49;
  std::vector<Bounds> bounds;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> initial_positions;  // optional, replace the first particles

  void validate() const {
    if (swarm_size < 2 && initial_positions.size() != 1) throw ValidationError("swarm_size must be at least 2");
    if (iterations == 0) throw ValidationError("iterations must be at least 1");
    if (bounds.empty()) throw ValidationError("PSO needs at least one dimension");
    for (std::size_t d = 0; d < bounds.size(); ++d)
      if (!(bounds[d].lo < bounds[d].hi))
        throw ValidationError("bounds[" + std::to_string(d) + "]: lo must be below hi");
    for (const auto& p : initial_positions)
      if (p.size() != bounds.size()) throw ValidationError("initial position has the wrong dimension");
  }
};

struct Particle {
  std::vector<double> position;
  std::vector<double> velocity;
  std::vector<double> best_position;
  double best_fitness = 0.0;
};

struct PsoIteration {
  std::size_t iteration = 0;
  double best_fitness = 0.0;
  std::vector<double> best_position;
};

struct PsoResult {
  std::vector<double> best_position;
  double best_fitness = 0.0;
  std::vector<PsoIteration> history;  // one entry per iteration, the first being the initial swarm
  std::size_t evaluations = 0;
};

using FitnessFn = std::function<double(const std::vector<double>&)>;

namespace detail {

inline std::string format_position(const std::vector<double>& x) {
  std::string s = "[";
  for (std::size_t i = 0; i < x.size(); ++i) s += (i ? ", " : "") + format_double(x[i]);
  return s + "]";
}

inline double checked_fitness(const FitnessFn& f, const std::vector<double>& x) {
  const double v = f(x);
  if (!std::isfinite(v)) throw RuntimeError("fitness is not finite at position " + format_position(x));
  return v;
}

}  // namespace detail

// Global-best PSO. Particles are evaluated in index order; each particle draws
// from its own derived stream so the result does not depend on evaluation order.
inline PsoResult pso_minimize(const FitnessFn& fitness, const PsoConfig& config) {
  config.validate();
  const std::size_t dim = config.bounds.size();
  const std::size_t n = std::max(config.swarm_size, config.initial_positions.size());
  std::vector<Particle> swarm(n);
  std::vector<Rng> streams;
  streams.reserve(n);
  for (std::size_t i = 0; i < n; ++i) streams.emplace_back(derive_seed(config.seed, i));

  PsoResult result;
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = swarm[i];
    auto& rng = streams[i];
    p.position.resize(dim);
    p.velocity.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      const auto [lo, hi] = config.bounds[d];
      p.position[d] = i < config.initial_positions.size() ? std::clamp(config.initial_positions[i][d], lo, hi)
                                                          : rng.uniform(lo, hi);
      p.velocity[d] = rng.uniform(-(hi - lo), hi - lo) * 0.1;
    }
    p.best_position = p.position;
    p.best_fitness = detail::checked_fitness(fitness, p.position);
    ++result.evaluations;
    if (i == 0 || p.best_fitness < result.best_fitness) {
      result.best_fitness = p.best_fitness;
      result.best_position = p.position;
    }
  }
  result.history.push_back({1, result.best_fitness, result.best_position});

  for (std::size_t it = 2; it <= config.iterations; ++it) {
    const auto gbest = result.best_position;
    for (std::size_t i = 0; i < n; ++i) {
      auto& p = swarm[i];
      auto& rng = streams[i];
      for (std::size_t d = 0; d < dim; ++d) {
        const auto [lo, hi] = config.bounds[d];
        const double r1 = rng.uniform(), r2 = rng.uniform();
        double v = config.inertia * p.velocity[d] + config.cognitive * r1 * (p.best_position[d] - p.position[d]) +
                   config.social * r2 * (gbest[d] - p.position[d]);
        const double vmax = hi - lo;
        v = std::clamp(v, -vmax, vmax);
        p.velocity[d] = v;
        p.position[d] = std::clamp(p.position[d] + v, lo, hi);
      }
      const double f = detail::checked_fitness(fitness, p.position);
      ++result.evaluations;
      if (f < p.best_fitness) {
        p.best_fitness = f;
        p.best_position = p.position;
      }
    }
    for (const auto& p : swarm)
      if (p.best_fitness < result.best_fitness) {
        result.best_fitness = p.best_fitness;
        result.best_position = p.best_position;
      }
    result.history.push_back({it, result.best_fitness, result.best_position});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Weight tuning

// Scores a weight triple; lower is better.
using WeightHarness = std::function<double(const ObjectiveWeights&)>;

struct TuningResult {
  ObjectiveWeights weights;
  double score = 0.0;
  PsoResult pso;
};

inline PsoConfig default_weight_pso(std::uint64_t seed) {
  PsoConfig c;
  c.bounds.assign(3, Bounds{0.0, 1.0});
  c.seed = seed;
  return c;
}

inline TuningResult tune_objective_weights(const WeightHarness& harness, PsoConfig config) {
  if (config.bounds.empty()) config.bounds.assign(3, Bounds{0.0, 1.0});
  if (config.bounds.size() != 3) throw ValidationError("weight tuning searches exactly three dimensions");
  auto fitness = [&harness](const std::vector<double>& x) {
    const ObjectiveWeights w(x[0], x[1], x[2]);
    try {
      return harness(w);
    } catch (const std::exception& e) {
      throw RuntimeError(std::string(e.what()) + " (weights " + detail::format_position({w.w1(), w.w2(), w.w3()}) + ")");
    }
  };
  TuningResult r;
  r.pso = pso_minimize(fitness, config);
  const auto& x = r.pso.best_position;
  r.weights = ObjectiveWeights(x[0], x[1], x[2]);
  r.score = r.pso.best_fitness;
  return r;
}

inline void write_tuning_log(const PsoResult& pso, std::ostream& out) {
  out << "iteration,best_fitness,w1,w2,w3\n";
  for (const auto& h : pso.history) {
    const auto w = ObjectiveWeights::project({h.best_position.at(0), h.best_position.at(1), h.best_position.at(2)});
    out << h.iteration << ',' << format_double(h.best_fitness) << ',' << format_double(w[0]) << ','
        << format_double(w[1]) << ',' << format_double(w[2]) << '\n';
  }
}

inline void write_tuning_log(const PsoResult& pso, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path + "' for writing");
  write_tuning_log(pso, out);
}

}  // namespace cloudalloc
