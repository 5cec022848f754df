#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cloudalloc/common.hpp"
#include "cloudalloc/random.hpp"

namespace cloudalloc {

inline constexpr std::size_t kFeatureCount = 14;

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "cpu_util",       "mem_util",  "storage_util",       "disk_read_iops", "disk_write_iops",
    "net_in",         "net_out",   "request_rate",       "active_connections",
    "error_rate",     "queue_depth", "p99_latency",      "hour_sin",       "hour_cos"};

namespace feature {
inline constexpr std::size_t cpu_util = 0;
inline constexpr std::size_t mem_util = 1;
inline constexpr std::size_t storage_util = 2;
inline constexpr std::size_t disk_read_iops = 3;
inline constexpr std::size_t disk_write_iops = 4;
inline constexpr std::size_t net_in = 5;
inline constexpr std::size_t net_out = 6;
inline constexpr std::size_t request_rate = 7;
inline constexpr std::size_t active_connections = 8;
inline constexpr std::size_t error_rate = 9;
inline constexpr std::size_t queue_depth = 10;
inline constexpr std::size_t p99_latency = 11;
inline constexpr std::size_t hour_sin = 12;
inline constexpr std::size_t hour_cos = 13;
}  // namespace feature

inline std::optional<std::size_t> canonical_feature_index(std::string_view name) {
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    if (kFeatureNames[i] == name) return i;
  return std::nullopt;
}

struct MetricSeries {
  std::string name;
  std::vector<std::int64_t> timestamps;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }

  void validate() const {
    if (timestamps.size() != values.size())
      throw ValidationError("series '" + name + "': timestamps and values differ in length");
    for (std::size_t i = 1; i < timestamps.size(); ++i)
      if (timestamps[i] <= timestamps[i - 1])
        throw ValidationError("series '" + name + "': timestamps not strictly increasing at index " +
                              std::to_string(i));
  }
};

// Time-aligned table of the 14 feature columns. Column order follows the
// source (the CSV header for ingested traces, canonical order otherwise);
// consumers look columns up by name.
class TraceFrame {
 public:
  std::int64_t tick_interval = 300;
  std::vector<std::int64_t> timestamps;
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  static TraceFrame with_canonical_columns(std::int64_t interval) {
    TraceFrame f;
    f.tick_interval = interval;
    for (auto n : kFeatureNames) f.names.emplace_back(n);
    f.columns.resize(kFeatureCount);
    return f;
  }

  std::size_t size() const { return timestamps.size(); }
  bool empty() const { return timestamps.empty(); }
  std::int64_t start_time() const { return timestamps.empty() ? 0 : timestamps.front(); }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw ValidationError("trace has no column '" + std::string(name) + "'");
  }

  const std::vector<double>& column(std::string_view name) const { return columns[index_of(name)]; }
  std::vector<double>& column(std::string_view name) { return columns[index_of(name)]; }

  double at(std::size_t tick, std::string_view name) const { return column(name).at(tick); }

  // Row in canonical feature order regardless of storage order.
  std::array<double, kFeatureCount> canonical_row(std::size_t tick) const {
    std::array<double, kFeatureCount> row{};
    for (std::size_t i = 0; i < names.size(); ++i) {
      auto idx = canonical_feature_index(names[i]);
      if (idx) row[*idx] = columns[i][tick];
    }
    return row;
  }

  MetricSeries series(std::size_t col) const { return {names.at(col), timestamps, columns.at(col)}; }

  bool is_uniform() const {
    for (std::size_t i = 1; i < timestamps.size(); ++i)
      if (timestamps[i] - timestamps[i - 1] != tick_interval) return false;
    return true;
  }

  void validate() const {
    if (names.size() != kFeatureCount || columns.size() != kFeatureCount)
      throw ValidationError("trace must have exactly 14 feature columns, found " + std::to_string(columns.size()));
    for (std::size_t c = 0; c < columns.size(); ++c)
      if (columns[c].size() != timestamps.size())
        throw ValidationError("column '" + names[c] + "' length differs from the timestamp grid");
    for (auto n : kFeatureNames)
      if (std::find(names.begin(), names.end(), n) == names.end())
        throw ValidationError("trace is missing column '" + std::string(n) + "'");
    for (std::size_t i = 1; i < timestamps.size(); ++i)
      if (timestamps[i] <= timestamps[i - 1])
        throw ValidationError("timestamps not strictly increasing at tick " + std::to_string(i));
  }

  void require_uniform() const {
    validate();
    if (!is_uniform())
      throw ValidationError("trace is not on a uniform " + std::to_string(tick_interval) +
                            "s grid; run preprocessing first");
  }

  // Ticks [first, first + count).
  TraceFrame slice(std::size_t first, std::size_t count) const {
    if (first + count > size()) throw ValidationError("trace slice out of range");
    TraceFrame out;
    out.tick_interval = tick_interval;
    out.names = names;
    out.timestamps.assign(timestamps.begin() + first, timestamps.begin() + first + count);
    for (const auto& col : columns) out.columns.emplace_back(col.begin() + first, col.begin() + first + count);
    return out;
  }

  bool operator==(const TraceFrame&) const = default;
};

// ---------------------------------------------------------------------------
// Workload generation

struct WorkloadSpec {
  std::size_t duration_ticks = 8640;
  double base_level = 0.45;
  double daily_amplitude = 0.40;
  std::vector<int> peak_hours = {20};
  double peak_width_hours = 3.0;
  double noise_sigma = 0.02;
  double burst_probability = 0.0;
  double burst_magnitude = 0.0;
  std::uint64_t seed = 0;
  std::int64_t tick_interval = 300;
  std::int64_t start_time = 1688169600;  // 2023-07-01T00:00:00Z

  void validate() const {
    auto frac = [](double v, const char* what) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string("workload ") + what + " must lie in [0,1]");
    };
    frac(base_level, "base_level");
    frac(daily_amplitude, "daily_amplitude");
    frac(noise_sigma, "noise_sigma");
    frac(burst_probability, "burst_probability");
    frac(burst_magnitude, "burst_magnitude");
    if (tick_interval <= 0 || 86400 % tick_interval != 0)
      throw ValidationError("workload tick_interval must divide one day");
    if (peak_width_hours <= 0.0) throw ValidationError("workload peak_width_hours must be positive");
    for (int h : peak_hours)
      if (h < 0 || h > 23) throw ValidationError("workload peak hour out of range: " + std::to_string(h));
  }
};

namespace detail {

inline double hour_of_day(std::int64_t ts) {
  const std::int64_t sec = ((ts % 86400) + 86400) % 86400;
  return static_cast<double>(sec) / 3600.0;
}

inline double peak_profile(double hour, const std::vector<int>& peaks, double width) {
  double p = 0.0;
  for (int peak : peaks) {
    double d = std::abs(hour - peak);
    d = std::min(d, 24.0 - d);
    p = std::max(p, std::exp(-d * d / (2.0 * width * width)));
  }
  return p;
}

inline double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace detail

// Synthetic tidal workload. The CPU column is base_level + daily_amplitude *
// s(hour) + noise + bursts, where s is the peak profile shifted to zero mean
// over a day and scaled to a maximum of 1; the other 13 columns are derived
// from the resulting load with their own noise.
inline TraceFrame generate_workload(const WorkloadSpec& spec) {
  spec.validate();
  if (spec.duration_ticks == 0) throw ValidationError("workload duration_ticks is 0: empty frame");

  const auto ticks_per_day = static_cast<std::size_t>(86400 / spec.tick_interval);
  double p_mean = 0.0, p_max = 0.0;
  for (std::size_t k = 0; k < ticks_per_day; ++k) {
    const double p = detail::peak_profile(detail::hour_of_day(spec.start_time + static_cast<std::int64_t>(k) * spec.tick_interval),
                                          spec.peak_hours, spec.peak_width_hours);
    p_mean += p;
    p_max = std::max(p_max, p);
  }
  p_mean /= static_cast<double>(ticks_per_day);
  const double span = p_max - p_mean;

  TraceFrame f = TraceFrame::with_canonical_columns(spec.tick_interval);
  for (auto& c : f.columns) c.reserve(spec.duration_ticks);
  f.timestamps.reserve(spec.duration_ticks);

  Rng rng(spec.seed);
  std::size_t burst_left = 0;
  const double sigma = spec.noise_sigma;
  for (std::size_t t = 0; t < spec.duration_ticks; ++t) {
    const std::int64_t ts = spec.start_time + static_cast<std::int64_t>(t) * spec.tick_interval;
    const double hour = detail::hour_of_day(ts);
    const double shape =
        span > 0.0 ? (detail::peak_profile(hour, spec.peak_hours, spec.peak_width_hours) - p_mean) / span : 0.0;

    if (burst_left == 0 && spec.burst_probability > 0.0 && rng.bernoulli(spec.burst_probability))
      burst_left = 1 + rng.index(6);
    double burst = 0.0;
    if (burst_left > 0) {
      burst = spec.burst_magnitude;
      --burst_left;
    }

    const double load = detail::clip01(spec.base_level + spec.daily_amplitude * shape + sigma * rng.normal() + burst);
    const double jitter = sigma * 0.5;
    const double rate = 1000.0 * load;

    f.timestamps.push_back(ts);
    f.columns[feature::cpu_util].push_back(load);
    f.columns[feature::mem_util].push_back(detail::clip01(0.65 + 0.15 * (load - spec.base_level) + jitter * rng.normal()));
    f.columns[feature::storage_util].push_back(detail::clip01(0.55 + 0.25 * load + jitter * rng.normal()));
    f.columns[feature::disk_read_iops].push_back(std::max(0.0, 8000.0 * load * (1.0 + sigma * rng.normal())));
    f.columns[feature::disk_write_iops].push_back(std::max(0.0, 4000.0 * load * (1.0 + sigma * rng.normal())));
    f.columns[feature::net_in].push_back(std::max(0.0, 300.0 * load * (1.0 + sigma * rng.normal())));
    f.columns[feature::net_out].push_back(std::max(0.0, 500.0 * load * (1.0 + sigma * rng.normal())));
    f.columns[feature::request_rate].push_back(rate);
    f.columns[feature::active_connections].push_back(std::max(0.0, 25.0 * rate * (1.0 + sigma * rng.normal())));
    f.columns[feature::error_rate].push_back(std::max(0.0, 0.0005 + 0.002 * load * load * (1.0 + sigma * rng.normal())));
    f.columns[feature::queue_depth].push_back(std::max(0.0, 8.0 * load * (1.0 + sigma * rng.normal())));
    f.columns[feature::p99_latency].push_back(std::max(0.0, 40.0 + 120.0 * load + 100.0 * jitter * rng.normal()));
    f.columns[feature::hour_sin].push_back(std::sin(2.0 * std::numbers::pi * hour / 24.0));
    f.columns[feature::hour_cos].push_back(std::cos(2.0 * std::numbers::pi * hour / 24.0));
  }
  return f;
}

// ---------------------------------------------------------------------------
// CSV

inline void write_csv(const TraceFrame& frame, std::ostream& out) {
  out << "timestamp";
  for (const auto& n : frame.names) out << ',' << n;
  out << '\n';
  for (std::size_t t = 0; t < frame.size(); ++t) {
    out << frame.timestamps[t];
    for (const auto& col : frame.columns) out << ',' << format_double(col[t]);
    out << '\n';
  }
}

inline void write_csv(const TraceFrame& frame, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path + "' for writing");
  write_csv(frame, out);
  if (!out) throw RuntimeError("write failed: '" + path + "'");
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(',', pos);
    out.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace detail

inline TraceFrame parse_csv(std::istream& in, const std::string& source = "<stream>") {
  auto fail = [&](std::size_t line, const std::string& msg) -> ValidationError {
    return ValidationError(source + ":" + std::to_string(line) + ": " + msg);
  };
  std::string line;
  if (!std::getline(in, line)) throw fail(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_commas(line);
  if (header.size() != kFeatureCount + 1)
    throw fail(1, "expected " + std::to_string(kFeatureCount + 1) + " columns, found " + std::to_string(header.size()));
  if (header[0] != "timestamp") throw fail(1, "first column must be 'timestamp'");

  TraceFrame f;
  std::set<std::string_view> seen;
  for (std::size_t i = 1; i < header.size(); ++i) {
    if (!canonical_feature_index(header[i])) throw fail(1, "unknown column '" + std::string(header[i]) + "'");
    if (!seen.insert(header[i]).second) throw fail(1, "duplicate column '" + std::string(header[i]) + "'");
    f.names.emplace_back(header[i]);
  }
  f.columns.resize(kFeatureCount);

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size())
      throw fail(lineno, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    std::int64_t ts = 0;
    auto [ptr, ec] = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), ts);
    if (ec != std::errc{} || ptr != cells[0].data() + cells[0].size())
      throw fail(lineno, "unparseable timestamp '" + std::string(cells[0]) + "'");
    if (!f.timestamps.empty() && ts <= f.timestamps.back())
      throw fail(lineno, "timestamp " + std::to_string(ts) + " does not increase");
    f.timestamps.push_back(ts);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      double v = 0.0;
      if (!parse_double(cells[c], v) || !std::isfinite(v))
        throw fail(lineno, "unparseable number '" + std::string(cells[c]) + "' in column '" + f.names[c - 1] + "'");
      f.columns[c - 1].push_back(v);
    }
  }

  // Smallest observed spacing; irregular traces keep their gaps until resampled.
  f.tick_interval = 300;
  if (f.timestamps.size() > 1) {
    std::int64_t best = f.timestamps[1] - f.timestamps[0];
    for (std::size_t i = 2; i < f.timestamps.size(); ++i) best = std::min(best, f.timestamps[i] - f.timestamps[i - 1]);
    f.tick_interval = best;
  }
  return f;
}

inline TraceFrame ingest_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open trace '" + path + "'");
  return parse_csv(in, path);
}

// ---------------------------------------------------------------------------
// Preprocessing

struct CleanResult {
  MetricSeries series;
  std::size_t removed_count = 0;
  std::vector<std::int64_t> removed_timestamps;
};

// Drops values farther than three population standard deviations from the
// mean. Mean and deviation are computed once over the whole input.
inline CleanResult clean_outliers_3sigma(const MetricSeries& series) {
  if (series.values.empty()) throw ValidationError("cannot clean empty series '" + series.name + "'");
  series.validate();
  const double m = mean_of(series.values);
  const double limit = 3.0 * stddev_of(series.values);
  CleanResult out;
  out.series.name = series.name;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (std::abs(series.values[i] - m) > limit) {
      out.removed_timestamps.push_back(series.timestamps[i]);
      ++out.removed_count;
    } else {
      out.series.timestamps.push_back(series.timestamps[i]);
      out.series.values.push_back(series.values[i]);
    }
  }
  return out;
}

struct Grid {
  std::int64_t start = 0;
  std::size_t count = 0;
};

inline constexpr double kDefaultEmaAlpha = 0.3;

// Buckets samples onto start + k*interval (bucket k spans
// [start + k*interval, start + (k+1)*interval)), averaging samples that share
// a bucket. Empty buckets take the EMA of the preceding output values; a
// leading gap takes the first observed value.
inline MetricSeries resample_and_impute(const MetricSeries& series, std::int64_t interval, double alpha,
                                        std::optional<Grid> grid = std::nullopt) {
  if (series.values.empty()) throw ValidationError("cannot resample empty series '" + series.name + "'");
  if (interval <= 0) throw ValidationError("resample interval must be positive");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("EMA alpha must lie in (0,1]");
  series.validate();

  Grid g = grid.value_or(Grid{series.timestamps.front(),
                              static_cast<std::size_t>((series.timestamps.back() - series.timestamps.front()) / interval) + 1});
  std::vector<double> sums(g.count, 0.0);
  std::vector<std::size_t> counts(g.count, 0);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::int64_t off = series.timestamps[i] - g.start;
    if (off < 0) continue;
    const auto k = static_cast<std::size_t>(off / interval);
    if (k >= g.count) continue;
    sums[k] += series.values[i];
    ++counts[k];
  }

  MetricSeries out;
  out.name = series.name;
  out.timestamps.resize(g.count);
  out.values.resize(g.count);
  std::optional<double> first_observed;
  for (std::size_t k = 0; k < g.count && !first_observed; ++k)
    if (counts[k] > 0) first_observed = sums[k] / static_cast<double>(counts[k]);
  if (!first_observed) first_observed = series.values.front();

  std::optional<double> ema;
  for (std::size_t k = 0; k < g.count; ++k) {
    out.timestamps[k] = g.start + static_cast<std::int64_t>(k) * interval;
    double v;
    if (counts[k] > 0) {
      v = sums[k] / static_cast<double>(counts[k]);
    } else {
      v = ema ? *ema : *first_observed;
    }
    ema = ema ? alpha * v + (1.0 - alpha) * *ema : v;
    out.values[k] = v;
  }
  return out;
}

struct ScalerParams {
  std::vector<std::string> names;
  std::vector<double> min;
  std::vector<double> max;

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw ValidationError("scaler has no column '" + std::string(name) + "'");
  }

  double transform(std::size_t col, double v) const {
    const double range = max[col] - min[col];
    return range > 0.0 ? (v - min[col]) / range : 0.0;
  }

  double inverse(std::size_t col, double v) const { return min[col] + v * (max[col] - min[col]); }

  bool operator==(const ScalerParams&) const = default;
};

inline std::pair<TraceFrame, ScalerParams> minmax_fit_transform(const TraceFrame& frame) {
  ScalerParams p;
  p.names = frame.names;
  TraceFrame out = frame;
  for (std::size_t c = 0; c < frame.columns.size(); ++c) {
    const auto& col = frame.columns[c];
    if (col.empty()) throw ValidationError("column '" + frame.names[c] + "' has no values to scale");
    const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
    p.min.push_back(*lo);
    p.max.push_back(*hi);
    for (auto& v : out.columns[c]) v = p.transform(c, v);
  }
  return {std::move(out), std::move(p)};
}

inline TraceFrame minmax_apply(const TraceFrame& frame, const ScalerParams& p) {
  TraceFrame out = frame;
  for (std::size_t c = 0; c < frame.columns.size(); ++c) {
    const std::size_t pc = p.index_of(frame.names[c]);
    for (auto& v : out.columns[c]) v = p.transform(pc, v);
  }
  return out;
}

inline TraceFrame inverse_transform(const TraceFrame& frame, const ScalerParams& p) {
  TraceFrame out = frame;
  for (std::size_t c = 0; c < frame.columns.size(); ++c) {
    const std::size_t pc = p.index_of(frame.names[c]);
    for (auto& v : out.columns[c]) v = p.inverse(pc, v);
  }
  return out;
}

struct PreprocessOptions {
  std::int64_t interval = 300;
  double alpha = kDefaultEmaAlpha;
};

struct PreprocessResult {
  TraceFrame frame;  // normalized, uniform grid
  ScalerParams scaler;
  std::vector<std::size_t> removed_per_column;
  std::size_t filled_points = 0;
};

// clean -> resample/impute -> min-max, column by column on one shared grid.
inline PreprocessResult preprocess(const TraceFrame& raw, const PreprocessOptions& opt = {}) {
  raw.validate();
  if (raw.empty()) throw ValidationError("cannot preprocess an empty trace");
  const Grid grid{raw.timestamps.front(),
                  static_cast<std::size_t>((raw.timestamps.back() - raw.timestamps.front()) / opt.interval) + 1};
  PreprocessResult r;
  TraceFrame regular;
  regular.tick_interval = opt.interval;
  regular.names = raw.names;
  for (std::size_t c = 0; c < raw.columns.size(); ++c) {
    auto cleaned = clean_outliers_3sigma(raw.series(c));
    r.removed_per_column.push_back(cleaned.removed_count);
    std::size_t observed = 0;
    {
      std::set<std::int64_t> buckets;
      for (auto ts : cleaned.series.timestamps) {
        const std::int64_t off = ts - grid.start;
        if (off >= 0 && static_cast<std::size_t>(off / opt.interval) < grid.count) buckets.insert(off / opt.interval);
      }
      observed = buckets.size();
    }
    r.filled_points += grid.count - observed;
    auto resampled = resample_and_impute(cleaned.series, opt.interval, opt.alpha, grid);
    if (c == 0) regular.timestamps = resampled.timestamps;
    regular.columns.push_back(std::move(resampled.values));
  }
  auto [scaled, params] = minmax_fit_transform(regular);
  r.frame = std::move(scaled);
  r.scaler = std::move(params);
  return r;
}

// ---------------------------------------------------------------------------
// Windowing

inline constexpr std::size_t kDefaultWindowLen = 72;
inline constexpr std::size_t kDefaultHorizon = 12;

// Sliding windows over a shared row-major copy of the frame (canonical
// column order). Window i covers rows [start_i, start_i + window_len); its
// target is the target column over the following `horizon` rows.
class WindowedDataset {
 public:
  WindowedDataset() = default;
  WindowedDataset(std::shared_ptr<const std::vector<double>> rows, std::vector<double> target_column,
                  std::size_t window_len, std::size_t horizon, std::string target_metric, std::vector<std::size_t> starts)
      : rows_(std::move(rows)),
        target_(std::make_shared<const std::vector<double>>(std::move(target_column))),
        window_len_(window_len),
        horizon_(horizon),
        target_metric_(std::move(target_metric)),
        starts_(std::move(starts)) {}

  std::size_t size() const { return starts_.size(); }
  bool empty() const { return starts_.empty(); }
  std::size_t window_len() const { return window_len_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t input_size() const { return kFeatureCount; }
  const std::string& target_metric() const { return target_metric_; }
  std::size_t start(std::size_t i) const { return starts_.at(i); }
  const std::vector<std::size_t>& starts() const { return starts_; }

  std::span<const double> input(std::size_t i) const {
    return std::span<const double>(*rows_).subspan(starts_.at(i) * kFeatureCount, window_len_ * kFeatureCount);
  }

  std::span<const double> target(std::size_t i) const {
    return std::span<const double>(*target_).subspan(starts_.at(i) + window_len_, horizon_);
  }

  WindowedDataset subset(std::size_t first, std::size_t count) const {
    WindowedDataset d = *this;
    d.starts_.assign(starts_.begin() + first, starts_.begin() + first + count);
    return d;
  }

  // Every `stride`-th window, for desk-scale training runs.
  WindowedDataset strided(std::size_t stride) const {
    WindowedDataset d = *this;
    d.starts_.clear();
    for (std::size_t i = 0; i < starts_.size(); i += std::max<std::size_t>(stride, 1)) d.starts_.push_back(starts_[i]);
    return d;
  }

 private:
  std::shared_ptr<const std::vector<double>> rows_;
  std::shared_ptr<const std::vector<double>> target_;
  std::size_t window_len_ = 0;
  std::size_t horizon_ = 0;
  std::string target_metric_;
  std::vector<std::size_t> starts_;
};

inline std::vector<double> canonical_rows(const TraceFrame& frame) {
  std::vector<double> rows;
  rows.reserve(frame.size() * kFeatureCount);
  for (std::size_t t = 0; t < frame.size(); ++t) {
    const auto r = frame.canonical_row(t);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return rows;
}

inline WindowedDataset make_windows(const TraceFrame& frame, std::size_t window_len = kDefaultWindowLen,
                                    std::size_t horizon = kDefaultHorizon, std::string_view target_metric = "cpu_util") {
  frame.validate();
  if (window_len == 0 || horizon == 0) throw ValidationError("window_len and horizon must be positive");
  const std::size_t n = frame.size();
  if (n < window_len + horizon)
    throw ValidationError("trace too short for windowing: need at least " + std::to_string(window_len + horizon) +
                          " ticks, have " + std::to_string(n));
  std::vector<std::size_t> starts(n - window_len - horizon + 1);
  for (std::size_t i = 0; i < starts.size(); ++i) starts[i] = i;
  return WindowedDataset(std::make_shared<const std::vector<double>>(canonical_rows(frame)), frame.column(target_metric),
                         window_len, horizon, std::string(target_metric), std::move(starts));
}

// Chronological split: the first floor(ratio * count) windows train.
inline std::pair<WindowedDataset, WindowedDataset> split_train_test(const WindowedDataset& data, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("split ratio must lie in (0,1)");
  const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(data.size())));
  if (n_train == 0 || n_train == data.size())
    throw ValidationError("split leaves an empty side: " + std::to_string(n_train) + " of " +
                          std::to_string(data.size()) + " windows in train");
  return {data.subset(0, n_train), data.subset(n_train, data.size() - n_train)};
}

}  // namespace cloudalloc
