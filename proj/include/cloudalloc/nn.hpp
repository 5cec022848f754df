#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cloudalloc/common.hpp"
#include "cloudalloc/random.hpp"

namespace cloudalloc {

// Dense row-major matrix; vectors are rows x 1.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 1;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }
  bool operator==(const Tensor&) const = default;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;
using ConstNamedTensors = std::vector<std::pair<std::string, const Tensor*>>;

inline void fill_uniform(Tensor& t, double bound, Rng& rng) {
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
}

// y += W x
inline void gemv_add(const Tensor& w, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* row = w.data.data() + r * w.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    y[r] += acc;
  }
}

// x += W^T y
inline void gemv_t_add(const Tensor& w, std::span<const double> y, std::span<double> x) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* row = w.data.data() + r * w.cols;
    const double yr = y[r];
    if (yr == 0.0) continue;
    for (std::size_t c = 0; c < w.cols; ++c) x[c] += row[c] * yr;
  }
}

// G += y x^T
inline void outer_add(Tensor& g, std::span<const double> y, std::span<const double> x) {
  for (std::size_t r = 0; r < g.rows; ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    double* row = g.data.data() + r * g.cols;
    for (std::size_t c = 0; c < g.cols; ++c) row[c] += yr * x[c];
  }
}

// Inverted dropout: kept units are scaled by 1/(1-rate) so inference needs
// no rescaling.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;

  bool active() const { return rate > 0.0 && rng != nullptr; }

  std::vector<double> mask(std::size_t n) const {
    std::vector<double> m(n, 1.0);
    if (!active()) return m;
    const double keep = 1.0 / (1.0 - rate);
    for (auto& v : m) v = rng->uniform() < rate ? 0.0 : keep;
    return m;
  }
};

struct DenseLayer {
  Tensor weight;  // out x in
  Tensor bias;    // out x 1
};

// Feed-forward stack: ReLU between layers, linear output.
class Mlp {
 public:
  std::vector<DenseLayer> layers;

  struct Cache {
    std::vector<std::vector<double>> inputs;  // input to each layer (post activation/dropout)
    std::vector<std::vector<double>> pre;     // pre-activation of each hidden layer
    std::vector<std::vector<double>> masks;   // dropout mask after each hidden layer
  };

  static Mlp init(const std::vector<std::size_t>& sizes, Rng& rng) {
    if (sizes.size() < 2) throw ValidationError("an MLP needs at least input and output sizes");
    Mlp m;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      if (sizes[i] == 0 || sizes[i + 1] == 0) throw ValidationError("MLP layer of size zero");
      DenseLayer l{Tensor(sizes[i + 1], sizes[i]), Tensor(sizes[i + 1], 1)};
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[i]));
      fill_uniform(l.weight, bound, rng);
      fill_uniform(l.bias, bound, rng);
      m.layers.push_back(std::move(l));
    }
    return m;
  }

  std::size_t input_size() const { return layers.empty() ? 0 : layers.front().weight.cols; }
  std::size_t output_size() const { return layers.empty() ? 0 : layers.back().weight.rows; }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s;
    if (layers.empty()) return s;
    s.push_back(input_size());
    for (const auto& l : layers) s.push_back(l.weight.rows);
    return s;
  }

  std::vector<double> forward(std::span<const double> x, Cache* cache = nullptr, const Dropout& drop = {}) const {
    if (x.size() != input_size())
      throw ValidationError("MLP input has " + std::to_string(x.size()) + " values, expected " +
                            std::to_string(input_size()));
    std::vector<double> a(x.begin(), x.end());
    if (cache) *cache = Cache{};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      std::vector<double> z(l.bias.data);
      gemv_add(l.weight, a, z);
      if (cache) cache->inputs.push_back(a);
      if (i + 1 == layers.size()) return z;
      if (cache) cache->pre.push_back(z);
      for (auto& v : z) v = v > 0.0 ? v : 0.0;
      if (drop.active()) {
        auto m = drop.mask(z.size());
        for (std::size_t k = 0; k < z.size(); ++k) z[k] *= m[k];
        if (cache) cache->masks.push_back(std::move(m));
      } else if (cache) {
        cache->masks.emplace_back(z.size(), 1.0);
      }
      a = std::move(z);
    }
    return a;
  }

  // Accumulates parameter gradients into `grad`; returns dL/dx.
  std::vector<double> backward(const Cache& cache, std::span<const double> dout, Mlp& grad) const {
    std::vector<double> d(dout.begin(), dout.end());
    for (std::size_t i = layers.size(); i-- > 0;) {
      const auto& l = layers[i];
      auto& g = grad.layers[i];
      outer_add(g.weight, d, cache.inputs[i]);
      for (std::size_t k = 0; k < d.size(); ++k) g.bias.data[k] += d[k];
      std::vector<double> dx(l.weight.cols, 0.0);
      gemv_t_add(l.weight, d, dx);
      if (i > 0) {
        const auto& pre = cache.pre[i - 1];
        const auto& mask = cache.masks[i - 1];
        for (std::size_t k = 0; k < dx.size(); ++k) dx[k] = pre[k] > 0.0 ? dx[k] * mask[k] : 0.0;
      }
      d = std::move(dx);
    }
    return d;
  }

  Mlp zeros_like() const {
    Mlp m;
    for (const auto& l : layers) m.layers.push_back({Tensor(l.weight.rows, l.weight.cols), Tensor(l.bias.rows, 1)});
    return m;
  }

  NamedTensors tensors(const std::string& prefix) {
    NamedTensors out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      out.emplace_back(prefix + std::to_string(i) + ".weight", &layers[i].weight);
      out.emplace_back(prefix + std::to_string(i) + ".bias", &layers[i].bias);
    }
    return out;
  }

  bool operator==(const Mlp& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (!(layers[i].weight == o.layers[i].weight) || !(layers[i].bias == o.layers[i].bias)) return false;
    return true;
  }
};

inline double global_norm(const NamedTensors& ts) {
  double acc = 0.0;
  for (const auto& [_, t] : ts)
    for (double v : t->data) acc += v * v;
  return std::sqrt(acc);
}

inline bool all_finite(const NamedTensors& ts) {
  for (const auto& [_, t] : ts)
    for (double v : t->data)
      if (!std::isfinite(v)) return false;
  return true;
}

// Gradient descent with heavy-ball momentum and global-norm clipping.
class MomentumSgd {
 public:
  explicit MomentumSgd(double momentum = 0.9, double clip_norm = 5.0) : momentum_(momentum), clip_norm_(clip_norm) {}

  void step(const NamedTensors& params, const NamedTensors& grads, double lr) {
    if (velocity_.empty())
      for (const auto& [_, p] : params) velocity_.emplace_back(p->size(), 0.0);
    double scale = 1.0;
    if (clip_norm_ > 0.0) {
      const double norm = global_norm(grads);
      if (norm > clip_norm_) scale = clip_norm_ / norm;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& v = velocity_[i];
      auto& p = params[i].second->data;
      const auto& g = grads[i].second->data;
      for (std::size_t k = 0; k < p.size(); ++k) {
        v[k] = momentum_ * v[k] + scale * g[k];
        p[k] -= lr * v[k];
      }
    }
  }

 private:
  double momentum_;
  double clip_norm_;
  std::vector<std::vector<double>> velocity_;
};

// Checkpoint tensor list: [{name, shape: [rows, cols], values: row-major}].
inline nlohmann::json tensors_to_json(const NamedTensors& ts) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [name, t] : ts)
    arr.push_back({{"name", name}, {"shape", {t->rows, t->cols}}, {"values", t->data}});
  return arr;
}

inline void tensors_from_json(const nlohmann::json& arr, const NamedTensors& ts) {
  if (!arr.is_array() || arr.size() != ts.size())
    throw ValidationError("checkpoint holds " + std::to_string(arr.is_array() ? arr.size() : 0) + " tensors, expected " +
                          std::to_string(ts.size()));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto& j = arr[i];
    const auto& [name, t] = ts[i];
    if (j.at("name").get<std::string>() != name)
      throw ValidationError("checkpoint tensor " + std::to_string(i) + " is '" + j.at("name").get<std::string>() +
                            "', expected '" + name + "'");
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != t->rows || shape[1] != t->cols)
      throw ValidationError("checkpoint tensor '" + name + "' has the wrong shape");
    auto values = j.at("values").get<std::vector<double>>();
    if (values.size() != t->size()) throw ValidationError("checkpoint tensor '" + name + "' has the wrong length");
    t->data = std::move(values);
  }
}

}  // namespace cloudalloc
