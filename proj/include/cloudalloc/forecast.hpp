#pragma once

#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cloudalloc/common.hpp"
#include "cloudalloc/nn.hpp"
#include "cloudalloc/random.hpp"
#include "cloudalloc/trace.hpp"

namespace cloudalloc {

// One LSTM layer with the four gates stacked row-wise in the order
// input, forget, candidate, output: w is 4H x I, u is 4H x H, b is 4H x 1.
struct LstmLayerParams {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  Tensor w;
  Tensor u;
  Tensor b;

  static LstmLayerParams zeros(std::size_t in, std::size_t hidden) {
    return {in, hidden, Tensor(4 * hidden, in), Tensor(4 * hidden, hidden), Tensor(4 * hidden, 1)};
  }
};

struct ForecastArchitecture {
  std::size_t input_size = kFeatureCount;
  std::vector<std::size_t> layer_sizes = {128, 256, 128};
  std::vector<std::size_t> dense_sizes = {64, 32};
  std::size_t horizon = kDefaultHorizon;
  double dropout_rate = 0.3;

  // CI-sized network; pair with window 24.
  static ForecastArchitecture desk() { return {kFeatureCount, {16, 32, 16}, {64, 32}, 6, 0.1}; }
};

struct ForecastModel {
  std::vector<LstmLayerParams> lstm;
  Mlp head;
  double dropout_rate = 0.3;
  std::size_t horizon = 0;
  std::string target_metric = "cpu_util";
  std::optional<ScalerParams> scaler;

  std::size_t input_size() const { return lstm.empty() ? 0 : lstm.front().input_size; }

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> s;
    for (const auto& l : lstm) s.push_back(l.hidden_size);
    return s;
  }

  std::vector<std::size_t> dense_sizes() const {
    auto s = head.sizes();
    if (s.size() < 2) return {};
    return {s.begin() + 1, s.end() - 1};
  }

  NamedTensors tensors() {
    NamedTensors out;
    for (std::size_t i = 0; i < lstm.size(); ++i) {
      const auto p = "lstm." + std::to_string(i);
      out.emplace_back(p + ".w", &lstm[i].w);
      out.emplace_back(p + ".u", &lstm[i].u);
      out.emplace_back(p + ".b", &lstm[i].b);
    }
    for (auto& t : head.tensors("dense.")) out.push_back(std::move(t));
    return out;
  }

  ForecastModel zeros_like() const {
    ForecastModel g;
    for (const auto& l : lstm) g.lstm.push_back(LstmLayerParams::zeros(l.input_size, l.hidden_size));
    g.head = head.zeros_like();
    g.dropout_rate = dropout_rate;
    g.horizon = horizon;
    g.target_metric = target_metric;
    return g;
  }

  bool same_parameters(const ForecastModel& o) const {
    auto a = const_cast<ForecastModel*>(this)->tensors();
    auto b = const_cast<ForecastModel&>(o).tensors();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(*a[i].second == *b[i].second)) return false;
    return true;
  }
};

inline ForecastModel init_model(const ForecastArchitecture& arch, std::uint64_t seed) {
  if (arch.layer_sizes.empty()) throw ValidationError("forecast model needs at least one LSTM layer");
  if (arch.horizon == 0) throw ValidationError("forecast horizon must be positive");
  if (arch.input_size == 0) throw ValidationError("forecast input size must be positive");
  if (!(arch.dropout_rate >= 0.0 && arch.dropout_rate < 1.0)) throw ValidationError("dropout_rate must lie in [0,1)");
  Rng rng(seed);
  ForecastModel m;
  m.dropout_rate = arch.dropout_rate;
  m.horizon = arch.horizon;
  std::size_t in = arch.input_size;
  for (std::size_t hidden : arch.layer_sizes) {
    if (hidden == 0) throw ValidationError("LSTM layer of size zero");
    auto l = LstmLayerParams::zeros(in, hidden);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in + hidden));
    fill_uniform(l.w, bound, rng);
    fill_uniform(l.u, bound, rng);
    fill_uniform(l.b, bound, rng);
    for (std::size_t k = hidden; k < 2 * hidden; ++k) l.b.data[k] = 1.0;
    m.lstm.push_back(std::move(l));
    in = hidden;
  }
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), arch.dense_sizes.begin(), arch.dense_sizes.end());
  sizes.push_back(arch.horizon);
  m.head = Mlp::init(sizes, rng);
  return m;
}

inline ForecastModel init_model(const std::vector<std::size_t>& layer_sizes, std::size_t horizon, std::uint64_t seed) {
  ForecastArchitecture arch;
  arch.layer_sizes = layer_sizes;
  arch.horizon = horizon;
  return init_model(arch, seed);
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmLayerCache {
  std::size_t steps = 0;
  std::vector<double> x;      // T x I
  std::vector<double> gates;  // T x 4H, post activation
  std::vector<double> c;      // (T+1) x H, row 0 is the initial zero state
  std::vector<double> tc;     // T x H, tanh(c_t)
  std::vector<double> h;      // (T+1) x H
  std::vector<double> mask;   // T x H dropout mask on outputs passed upward
};

struct ForecastCache {
  std::vector<LstmLayerCache> layers;
  Mlp::Cache head;
};

inline void lstm_layer_forward(const LstmLayerParams& p, std::span<const double> x, std::size_t steps,
                               LstmLayerCache& cache) {
  const std::size_t H = p.hidden_size, I = p.input_size;
  cache.steps = steps;
  cache.x.assign(x.begin(), x.end());
  cache.gates.assign(steps * 4 * H, 0.0);
  cache.c.assign((steps + 1) * H, 0.0);
  cache.tc.assign(steps * H, 0.0);
  cache.h.assign((steps + 1) * H, 0.0);
  std::vector<double> z(4 * H);
  for (std::size_t t = 0; t < steps; ++t) {
    std::copy(p.b.data.begin(), p.b.data.end(), z.begin());
    gemv_add(p.w, x.subspan(t * I, I), z);
    gemv_add(p.u, std::span<const double>(cache.h).subspan(t * H, H), z);
    double* gate = cache.gates.data() + t * 4 * H;
    const double* c_prev = cache.c.data() + t * H;
    double* c_cur = cache.c.data() + (t + 1) * H;
    double* tc = cache.tc.data() + t * H;
    double* h = cache.h.data() + (t + 1) * H;
    for (std::size_t k = 0; k < H; ++k) {
      const double ig = sigmoid(z[k]);
      const double fg = sigmoid(z[H + k]);
      const double gg = std::tanh(z[2 * H + k]);
      const double og = sigmoid(z[3 * H + k]);
      gate[k] = ig;
      gate[H + k] = fg;
      gate[2 * H + k] = gg;
      gate[3 * H + k] = og;
      c_cur[k] = fg * c_prev[k] + ig * gg;
      tc[k] = std::tanh(c_cur[k]);
      h[k] = og * tc[k];
    }
  }
}

// dout is T x H, the gradient w.r.t. the (unmasked) hidden outputs.
// Returns the T x I gradient w.r.t. the layer input.
inline std::vector<double> lstm_layer_backward(const LstmLayerParams& p, const LstmLayerCache& cache,
                                               std::span<const double> dout, LstmLayerParams& g) {
  const std::size_t H = p.hidden_size, I = p.input_size, T = cache.steps;
  std::vector<double> dx(T * I, 0.0);
  std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0), dz(4 * H), dh_prev(H);
  for (std::size_t t = T; t-- > 0;) {
    const double* gate = cache.gates.data() + t * 4 * H;
    const double* c_prev = cache.c.data() + t * H;
    const double* tc = cache.tc.data() + t * H;
    for (std::size_t k = 0; k < H; ++k) {
      const double ig = gate[k], fg = gate[H + k], gg = gate[2 * H + k], og = gate[3 * H + k];
      const double dh = dout[t * H + k] + dh_next[k];
      const double dc = dc_next[k] + dh * og * (1.0 - tc[k] * tc[k]);
      dz[k] = dc * gg * ig * (1.0 - ig);
      dz[H + k] = dc * c_prev[k] * fg * (1.0 - fg);
      dz[2 * H + k] = dc * ig * (1.0 - gg * gg);
      dz[3 * H + k] = dh * tc[k] * og * (1.0 - og);
      dc_next[k] = dc * fg;
    }
    outer_add(g.w, dz, std::span<const double>(cache.x).subspan(t * I, I));
    outer_add(g.u, dz, std::span<const double>(cache.h).subspan(t * H, H));
    for (std::size_t k = 0; k < 4 * H; ++k) g.b.data[k] += dz[k];
    gemv_t_add(p.w, dz, std::span<double>(dx).subspan(t * I, I));
    std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
    gemv_t_add(p.u, dz, dh_prev);
    dh_next.swap(dh_prev);
  }
  return dx;
}

inline std::vector<double> forecast_forward(const ForecastModel& m, std::span<const double> window,
                                            ForecastCache& cache, const Dropout& drop) {
  if (m.lstm.empty()) throw ValidationError("forecast model has no LSTM layers");
  const std::size_t I = m.input_size();
  if (window.empty() || window.size() % I != 0)
    throw ValidationError("window has " + std::to_string(window.size()) + " values; expected a multiple of input size " +
                          std::to_string(I));
  const std::size_t T = window.size() / I;
  cache.layers.resize(m.lstm.size());
  std::vector<double> seq(window.begin(), window.end());
  for (std::size_t l = 0; l < m.lstm.size(); ++l) {
    auto& lc = cache.layers[l];
    lstm_layer_forward(m.lstm[l], seq, T, lc);
    const std::size_t H = m.lstm[l].hidden_size;
    lc.mask = drop.mask(T * H);
    seq.assign(lc.h.begin() + static_cast<std::ptrdiff_t>(H), lc.h.end());
    for (std::size_t k = 0; k < seq.size(); ++k) seq[k] *= lc.mask[k];
  }
  const std::size_t H = m.lstm.back().hidden_size;
  std::span<const double> last(seq.data() + (T - 1) * H, H);
  return m.head.forward(last, &cache.head, drop);
}

inline void forecast_backward(const ForecastModel& m, const ForecastCache& cache, std::span<const double> dout,
                              ForecastModel& grad) {
  auto dlast = m.head.backward(cache.head, dout, grad.head);
  const std::size_t T = cache.layers.back().steps;
  std::size_t H = m.lstm.back().hidden_size;
  std::vector<double> dseq(T * H, 0.0);
  std::copy(dlast.begin(), dlast.end(), dseq.begin() + static_cast<std::ptrdiff_t>((T - 1) * H));
  for (std::size_t l = m.lstm.size(); l-- > 0;) {
    const auto& lc = cache.layers[l];
    for (std::size_t k = 0; k < dseq.size(); ++k) dseq[k] *= lc.mask[k];
    dseq = lstm_layer_backward(m.lstm[l], lc, dseq, grad.lstm[l]);
  }
}

}  // namespace detail

// Window is row-major, steps x input_size.
inline std::vector<double> forward(const ForecastModel& model, std::span<const double> window, bool training = false,
                                   std::uint64_t seed = 0) {
  Rng rng(seed);
  Dropout drop{training ? model.dropout_rate : 0.0, training ? &rng : nullptr};
  detail::ForecastCache cache;
  return detail::forecast_forward(model, window, cache, drop);
}

struct ForecastSample {
  std::span<const double> input;
  std::span<const double> target;
};

struct LossAndGradients {
  double loss = 0.0;
  ForecastModel gradients;
};

// Mean squared error over every (sample, horizon step) pair. With a dropout
// seed the forward pass is in training mode.
inline LossAndGradients loss_and_gradients(const ForecastModel& model, std::span<const ForecastSample> batch,
                                           std::optional<std::uint64_t> dropout_seed = std::nullopt) {
  if (batch.empty()) throw ValidationError("loss_and_gradients needs a non-empty batch");
  LossAndGradients out{0.0, model.zeros_like()};
  Rng rng(dropout_seed.value_or(0));
  Dropout drop{dropout_seed ? model.dropout_rate : 0.0, dropout_seed ? &rng : nullptr};
  const double denom = static_cast<double>(batch.size() * model.horizon);
  detail::ForecastCache cache;
  for (const auto& s : batch) {
    if (s.target.size() != model.horizon)
      throw ValidationError("target has " + std::to_string(s.target.size()) + " values, expected horizon " +
                            std::to_string(model.horizon));
    const auto pred = detail::forecast_forward(model, s.input, cache, drop);
    std::vector<double> d(pred.size());
    for (std::size_t k = 0; k < pred.size(); ++k) {
      const double r = pred[k] - s.target[k];
      out.loss += r * r / denom;
      d[k] = 2.0 * r / denom;
    }
    detail::forecast_backward(model, cache, d, out.gradients);
  }
  return out;
}

struct TrainConfig {
  std::size_t epochs = 100;
  double initial_lr = 0.001;
  double lr_min = 0.0;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double gradient_clip = 5.0;
  double momentum = 0.9;

  void validate() const {
    if (!(initial_lr > 0.0)) throw ValidationError("initial_lr must be positive");
    if (lr_min < 0.0 || lr_min > initial_lr) throw ValidationError("lr_min must lie in [0, initial_lr]");
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0,1)");
  }
};

// lr_min + (lr_0 - lr_min)(1 + cos(pi e / E)) / 2
inline double cosine_lr(std::size_t epoch, std::size_t epochs, double lr0, double lr_min) {
  if (epochs == 0) return lr0;
  const double frac = static_cast<double>(epoch) / static_cast<double>(epochs);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

struct TrainResult {
  ForecastModel model;
  std::vector<double> loss_curve;
  std::vector<double> learning_rates;
};

inline TrainResult train(ForecastModel model, const WindowedDataset& data, const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw ValidationError("cannot train on an empty dataset");
  if (data.horizon() != model.horizon)
    throw ValidationError("dataset horizon " + std::to_string(data.horizon()) + " differs from model horizon " +
                          std::to_string(model.horizon));
  TrainResult result;
  Rng rng(config.seed);
  MomentumSgd opt(config.momentum, config.gradient_clip);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<ForecastSample> batch;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const double lr = cosine_lr(e, config.epochs, config.initial_lr, config.lr_min);
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back({data.input(order[i]), data.target(order[i])});
      auto lg = loss_and_gradients(model, batch, rng.next_u64());
      if (!std::isfinite(lg.loss))
        throw RuntimeError("forecast training diverged at epoch " + std::to_string(e) +
                           " (loss is not finite); lower initial_lr");
      total += lg.loss * static_cast<double>(end - start);
      opt.step(model.tensors(), lg.gradients.tensors(), lr);
    }
    result.loss_curve.push_back(total / static_cast<double>(order.size()));
    result.learning_rates.push_back(lr);
  }
  result.model = std::move(model);
  return result;
}

struct ForecastMetrics {
  double rmse = 0.0;
  std::optional<double> mape;  // percent; empty when every target is zero
  std::size_t n_evaluated = 0;
  std::size_t n_excluded_zero_targets = 0;

  double mape_percent() const {
    if (!mape) throw ValidationError("MAPE undefined: every target is zero");
    return *mape;
  }
};

inline ForecastMetrics compute_metrics(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw ValidationError("prediction and target counts differ");
  if (preds.empty()) throw ValidationError("no points to evaluate");
  ForecastMetrics m;
  double sq = 0.0, ape = 0.0;
  std::size_t n_ape = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double r = preds[i] - targets[i];
    sq += r * r;
    if (std::abs(targets[i]) > 1e-9) {
      ape += std::abs(r) / std::abs(targets[i]);
      ++n_ape;
    } else {
      ++m.n_excluded_zero_targets;
    }
  }
  m.n_evaluated = preds.size();
  m.rmse = std::sqrt(sq / static_cast<double>(preds.size()));
  if (n_ape > 0) m.mape = 100.0 * ape / static_cast<double>(n_ape);
  return m;
}

namespace detail {

// Maps normalized target values back to original units when a scaler is known.
inline double denormalize(const std::optional<ScalerParams>& scaler, const std::string& metric, double v) {
  if (!scaler) return v;
  return scaler->inverse(scaler->index_of(metric), v);
}

}  // namespace detail

// Metrics are reported in original units when the model carries a scaler.
inline ForecastMetrics evaluate(const ForecastModel& model, const WindowedDataset& test) {
  if (test.empty()) throw ValidationError("cannot evaluate on an empty dataset");
  std::vector<double> preds, targets;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto p = forward(model, test.input(i));
    const auto t = test.target(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      preds.push_back(detail::denormalize(model.scaler, test.target_metric(), p[k]));
      targets.push_back(detail::denormalize(model.scaler, test.target_metric(), t[k]));
    }
  }
  return compute_metrics(preds, targets);
}

enum class BaselineKind { persistence, moving_average };

struct Baseline {
  BaselineKind kind = BaselineKind::persistence;
  std::size_t k = 1;

  std::string name() const {
    return kind == BaselineKind::persistence ? "persistence" : "moving_average(" + std::to_string(k) + ")";
  }
};

// `history` is the target metric's recent values, oldest first.
inline std::vector<double> baseline_predict(const Baseline& b, std::span<const double> history, std::size_t horizon) {
  if (history.empty()) throw ValidationError("baseline needs a non-empty window");
  if (b.kind == BaselineKind::persistence) return std::vector<double>(horizon, history.back());
  if (b.k == 0) throw ValidationError("moving average needs k >= 1");
  if (b.k > history.size()) throw ValidationError("moving average k exceeds the window length");
  return std::vector<double>(horizon, mean_of(history.subspan(history.size() - b.k)));
}

inline ForecastMetrics evaluate_baseline(const Baseline& b, const WindowedDataset& test,
                                         const std::optional<ScalerParams>& scaler = std::nullopt) {
  if (test.empty()) throw ValidationError("cannot evaluate on an empty dataset");
  const auto col = canonical_feature_index(test.target_metric());
  if (!col) throw ValidationError("unknown target metric '" + test.target_metric() + "'");
  std::vector<double> preds, targets, history(test.window_len());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto in = test.input(i);
    for (std::size_t t = 0; t < test.window_len(); ++t) history[t] = in[t * kFeatureCount + *col];
    const auto p = baseline_predict(b, history, test.horizon());
    const auto tg = test.target(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      preds.push_back(detail::denormalize(scaler, test.target_metric(), p[k]));
      targets.push_back(detail::denormalize(scaler, test.target_metric(), tg[k]));
    }
  }
  return compute_metrics(preds, targets);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json scaler_to_json(const ScalerParams& s) {
  return {{"names", s.names}, {"min", s.min}, {"max", s.max}};
}

inline ScalerParams scaler_from_json(const nlohmann::json& j) {
  ScalerParams s{j.at("names").get<std::vector<std::string>>(), j.at("min").get<std::vector<double>>(),
                 j.at("max").get<std::vector<double>>()};
  if (s.names.size() != s.min.size() || s.names.size() != s.max.size())
    throw ValidationError("scaler arrays differ in length");
  for (std::size_t i = 0; i < s.min.size(); ++i)
    if (s.max[i] < s.min[i]) throw ValidationError("scaler max below min for column '" + s.names[i] + "'");
  return s;
}

inline nlohmann::json checkpoint_to_json(const ForecastModel& model) {
  auto& m = const_cast<ForecastModel&>(model);
  nlohmann::json j = {{"format_version", kCheckpointFormatVersion},
                      {"layer_sizes", model.layer_sizes()},
                      {"dense_sizes", model.dense_sizes()},
                      {"input_size", model.input_size()},
                      {"horizon", model.horizon},
                      {"dropout_rate", model.dropout_rate},
                      {"target_metric", model.target_metric},
                      {"tensors", tensors_to_json(m.tensors())}};
  if (model.scaler) j["scaler"] = scaler_to_json(*model.scaler);
  return j;
}

inline ForecastModel checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw ValidationError("unsupported checkpoint format_version " + j.at("format_version").dump());
    ForecastArchitecture arch;
    arch.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    arch.dense_sizes = j.value("dense_sizes", std::vector<std::size_t>{64, 32});
    arch.input_size = j.value("input_size", kFeatureCount);
    arch.horizon = j.at("horizon").get<std::size_t>();
    arch.dropout_rate = j.value("dropout_rate", 0.3);
    auto m = init_model(arch, 0);
    m.target_metric = j.value("target_metric", std::string("cpu_util"));
    tensors_from_json(j.at("tensors"), m.tensors());
    if (j.contains("scaler")) m.scaler = scaler_from_json(j.at("scaler"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed forecast checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const ForecastModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path + "' for writing");
  out << checkpoint_to_json(model).dump(2) << '\n';
}

inline ForecastModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace cloudalloc
