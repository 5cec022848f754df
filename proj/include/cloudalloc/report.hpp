#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cloudalloc/common.hpp"
#include "cloudalloc/simenv.hpp"
#include "cloudalloc/trace.hpp"

namespace cloudalloc {

// Nearest rank: the ceil(p * n)-th smallest value.
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("percentile of an empty sample");
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("percentile rank must lie in (0,1]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

inline double sla_rate(std::span<const double> latencies, double bound_ms) {
  if (latencies.empty()) throw ValidationError("SLA rate of an empty sample");
  std::size_t ok = 0;
  for (double l : latencies) ok += l <= bound_ms ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(latencies.size());
}

// ---------------------------------------------------------------------------
// Costs

// Defaults price a static 160-VM run over 30 days of the default workload at
// roughly 85 / 35 / 23 / 45 currency units.
struct CostRates {
  double server = 6.15e-5;     // per provisioned core per tick
  double bandwidth = 1.125e-5; // per unit of net_in + net_out per tick
  double storage = 4.0e-3;     // per unit of storage utilization per tick
  double labor = 45.0;         // flat per run

  void validate() const {
    for (double r : {server, bandwidth, storage, labor})
      if (!(r >= 0.0) || !std::isfinite(r)) throw ValidationError("cost rates must be non-negative");
  }
  bool operator==(const CostRates&) const = default;
};

struct CostBreakdown {
  double server = 0.0;
  double bandwidth = 0.0;
  double storage = 0.0;
  double labor = 0.0;
  double total = 0.0;
  bool operator==(const CostBreakdown&) const = default;
};

inline CostBreakdown cost_of_run(const EpisodeTrace& trace, const CostRates& rates) {
  rates.validate();
  CostBreakdown c;
  for (const auto& r : trace.rows) {
    c.server += r.provisioned_cpu * rates.server;
    c.bandwidth += r.net_traffic * rates.bandwidth;
    c.storage += r.storage_util * rates.storage;
  }
  c.labor = rates.labor;
  c.total = c.server + c.bandwidth + c.storage + c.labor;
  return c;
}

// 100 (before - after) / before.
inline double savings_rate(double before, double after) {
  if (!(before > 0.0)) throw ValidationError("savings rate needs a positive 'before' value");
  return 100.0 * (before - after) / before;
}

inline double round1(double v) { return std::round(v * 10.0) / 10.0; }

// ---------------------------------------------------------------------------
// Run reports

struct RunReport {
  std::string policy;
  std::uint64_t seed = 0;
  std::size_t ticks = 0;
  double avg_cpu_util = 0.0, peak_cpu_util = 0.0;
  double avg_mem_util = 0.0, peak_mem_util = 0.0;
  double avg_storage_util = 0.0, peak_storage_util = 0.0;
  double latency_p50 = 0.0, latency_p95 = 0.0, latency_p99 = 0.0, latency_p999 = 0.0;
  double latency_mean = 0.0;
  double latency_cv = 0.0;
  double sla_rate = 0.0;
  double violation_rate = 0.0;
  double avg_active_vms = 0.0;
  CostBreakdown cost;

  bool operator==(const RunReport&) const = default;
};

inline RunReport build_report(const EpisodeTrace& trace, const ConstraintSet& constraints = {},
                              const CostRates& rates = {}) {
  if (trace.rows.empty()) throw ValidationError("cannot report on an empty episode");
  RunReport r;
  r.policy = trace.policy_name;
  r.seed = trace.seed;
  r.ticks = trace.size();
  std::vector<double> cpu, mem, io, lat;
  std::size_t violating = 0;
  double vms = 0.0;
  for (const auto& row : trace.rows) {
    cpu.push_back(row.cpu_util);
    mem.push_back(row.mem_util);
    io.push_back(row.storage_util);
    lat.push_back(row.latency_ms);
    violating += row.violations_count > 0 ? 1 : 0;
    vms += static_cast<double>(row.active_vms);
  }
  r.avg_cpu_util = mean_of(cpu);
  r.peak_cpu_util = *std::max_element(cpu.begin(), cpu.end());
  r.avg_mem_util = mean_of(mem);
  r.peak_mem_util = *std::max_element(mem.begin(), mem.end());
  r.avg_storage_util = mean_of(io);
  r.peak_storage_util = *std::max_element(io.begin(), io.end());
  r.latency_p50 = percentile(lat, 0.50);
  r.latency_p95 = percentile(lat, 0.95);
  r.latency_p99 = percentile(lat, 0.99);
  r.latency_p999 = percentile(lat, 0.999);
  r.latency_mean = mean_of(lat);
  r.latency_cv = r.latency_mean > 0.0 ? stddev_of(lat) / r.latency_mean : 0.0;
  r.sla_rate = sla_rate(lat, constraints.p99_latency_max);
  r.violation_rate = static_cast<double>(violating) / static_cast<double>(r.ticks);
  r.avg_active_vms = vms / static_cast<double>(r.ticks);
  r.cost = cost_of_run(trace, rates);
  return r;
}

inline constexpr const char* kReportFormatVersion = "1";

inline nlohmann::json cost_to_json(const CostBreakdown& c) {
  return {{"server", c.server}, {"bandwidth", c.bandwidth}, {"storage", c.storage}, {"labor", c.labor}, {"total", c.total}};
}

inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json j;
  j["format_version"] = kReportFormatVersion;
  j["policy"] = r.policy;
  j["seed"] = r.seed;
  j["ticks"] = r.ticks;
  j["utilization"] = {{"cpu", {{"avg", r.avg_cpu_util}, {"peak", r.peak_cpu_util}}},
                      {"mem", {{"avg", r.avg_mem_util}, {"peak", r.peak_mem_util}}},
                      {"storage", {{"avg", r.avg_storage_util}, {"peak", r.peak_storage_util}}}};
  j["latency_ms"] = {{"p50", r.latency_p50}, {"p95", r.latency_p95}, {"p99", r.latency_p99},
                     {"p999", r.latency_p999}, {"mean", r.latency_mean}, {"cv", r.latency_cv}};
  j["sla_rate"] = r.sla_rate;
  j["violation_rate"] = r.violation_rate;
  j["avg_active_vms"] = r.avg_active_vms;
  j["cost"] = cost_to_json(r.cost);
  return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<std::string>() != kReportFormatVersion)
      throw ValidationError("unsupported report format_version");
    RunReport r;
    r.policy = j.at("policy").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.ticks = j.at("ticks").get<std::size_t>();
    const auto& u = j.at("utilization");
    r.avg_cpu_util = u.at("cpu").at("avg");
    r.peak_cpu_util = u.at("cpu").at("peak");
    r.avg_mem_util = u.at("mem").at("avg");
    r.peak_mem_util = u.at("mem").at("peak");
    r.avg_storage_util = u.at("storage").at("avg");
    r.peak_storage_util = u.at("storage").at("peak");
    const auto& l = j.at("latency_ms");
    r.latency_p50 = l.at("p50");
    r.latency_p95 = l.at("p95");
    r.latency_p99 = l.at("p99");
    r.latency_p999 = l.at("p999");
    r.latency_mean = l.at("mean");
    r.latency_cv = l.at("cv");
    r.sla_rate = j.at("sla_rate");
    r.violation_rate = j.at("violation_rate");
    r.avg_active_vms = j.at("avg_active_vms");
    const auto& c = j.at("cost");
    r.cost = {c.at("server"), c.at("bandwidth"), c.at("storage"), c.at("labor"), c.at("total")};
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
}

inline constexpr std::size_t kHistogramBins = 50;

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};

// Equal-width bins over [min, max]; the last bin is closed.
inline Histogram histogram(std::span<const double> values, std::size_t bins = kHistogramBins) {
  if (bins == 0) throw ValidationError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  if (values.empty()) return h;
  h.lo = *std::min_element(values.begin(), values.end());
  h.hi = *std::max_element(values.begin(), values.end());
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  for (double v : values) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - h.lo) / width) : 0;
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw RuntimeError("failed writing '" + path.string() + "'");
}

}  // namespace detail

struct EmittedFiles {
  std::filesystem::path report;
  std::filesystem::path utilization_csv;
  std::filesystem::path latency_histogram_csv;
};

// Writes the JSON report plus <stem>_utilization.csv and <stem>_latency_hist.csv.
inline EmittedFiles emit_report(const RunReport& report, const EpisodeTrace& trace, const std::filesystem::path& path) {
  EmittedFiles files;
  files.report = path;
  const auto stem = path.parent_path() / path.stem();
  files.utilization_csv = stem.string() + "_utilization.csv";
  files.latency_histogram_csv = stem.string() + "_latency_hist.csv";

  detail::write_text(files.report, report_to_json(report).dump(2) + "\n");

  std::string util = "tick,cpu_util,mem_util,storage_util,active_vms\n";
  for (const auto& r : trace.rows)
    util += std::to_string(r.tick) + ',' + format_double(r.cpu_util) + ',' + format_double(r.mem_util) + ',' +
            format_double(r.storage_util) + ',' + std::to_string(r.active_vms) + '\n';
  detail::write_text(files.utilization_csv, util);

  std::vector<double> lat;
  for (const auto& r : trace.rows) lat.push_back(r.latency_ms);
  const auto h = histogram(lat);
  const double width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
  std::string hist = "bin,lower_ms,upper_ms,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    hist += std::to_string(b) + ',' + format_double(h.lo + width * static_cast<double>(b)) + ',' +
            format_double(b + 1 == h.counts.size() ? h.hi : h.lo + width * static_cast<double>(b + 1)) + ',' +
            std::to_string(h.counts[b]) + '\n';
  detail::write_text(files.latency_histogram_csv, hist);
  return files;
}

inline RunReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open report '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

// ---------------------------------------------------------------------------
// Comparisons

struct MetricChange {
  std::string metric;
  double baseline = 0.0;
  double candidate = 0.0;
  double relative_change_pct = 0.0;  // 100 (candidate - baseline) / baseline
  double absolute_change = 0.0;      // candidate - baseline
};

inline double relative_change_pct(double baseline, double candidate) {
  if (baseline == 0.0) return candidate == 0.0 ? 0.0 : std::nan("");
  return 100.0 * (candidate - baseline) / baseline;
}

struct Comparison {
  std::string baseline_policy;
  std::string candidate_policy;
  std::vector<MetricChange> changes;

  const MetricChange& at(const std::string& metric) const {
    for (const auto& c : changes)
      if (c.metric == metric) return c;
    throw ValidationError("comparison has no metric '" + metric + "'");
  }
};

inline Comparison compare_runs(const RunReport& baseline, const RunReport& candidate) {
  if (baseline.ticks != candidate.ticks)
    throw ValidationError("cannot compare runs of " + std::to_string(baseline.ticks) + " and " +
                          std::to_string(candidate.ticks) + " ticks");
  Comparison c{baseline.policy, candidate.policy, {}};
  auto add = [&c](const char* name, double b, double v) { c.changes.push_back({name, b, v, relative_change_pct(b, v), v - b}); };
  add("avg_cpu_util", baseline.avg_cpu_util, candidate.avg_cpu_util);
  add("latency_mean", baseline.latency_mean, candidate.latency_mean);
  add("latency_p99", baseline.latency_p99, candidate.latency_p99);
  add("sla_rate", baseline.sla_rate, candidate.sla_rate);
  add("total_cost", baseline.cost.total, candidate.cost.total);
  return c;
}

inline nlohmann::json comparison_to_json(const Comparison& c) {
  nlohmann::json j;
  j["format_version"] = kReportFormatVersion;
  j["baseline"] = c.baseline_policy;
  j["candidate"] = c.candidate_policy;
  j["metrics"] = nlohmann::json::array();
  for (const auto& m : c.changes) {
    nlohmann::json e{{"metric", m.metric}, {"baseline", m.baseline}, {"candidate", m.candidate},
                     {"absolute_change", m.absolute_change}};
    if (std::isfinite(m.relative_change_pct))
      e["relative_change_pct"] = m.relative_change_pct;
    else
      e["relative_change_pct"] = nullptr;
    if (m.metric == "avg_cpu_util") e["percentage_points"] = 100.0 * m.absolute_change;
    j["metrics"].push_back(e);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Early-warning events

struct CrossingEvent {
  std::size_t tick = 0;
  double value = 0.0;
  bool operator==(const CrossingEvent&) const = default;
};

// Ticks where the series moves from <= bound to > bound.
inline std::vector<CrossingEvent> threshold_crossing_events(std::span<const double> values, double bound) {
  std::vector<CrossingEvent> out;
  for (std::size_t t = 1; t < values.size(); ++t)
    if (values[t - 1] <= bound && values[t] > bound) out.push_back({t, values[t]});
  return out;
}

inline std::vector<CrossingEvent> threshold_crossing_events(const MetricSeries& series, double bound) {
  return threshold_crossing_events(series.values, bound);
}

// Forecast issued at tick tau: predictions for tau+1 .. tau+H.
using IssuedForecast = std::function<std::vector<double>(std::size_t tau)>;

struct EarlyWarningScore {
  std::size_t events = 0;
  std::size_t hits = 0;
  double hit_rate() const { return events ? static_cast<double>(hits) / static_cast<double>(events) : 1.0; }
};

// A crossing at t is hit when some forecast issued at least `lead` ticks
// earlier already predicted a value above the bound for t.
inline EarlyWarningScore early_warning_hit_rate(std::span<const double> actual, const IssuedForecast& forecast,
                                                double bound, std::size_t lead) {
  if (lead == 0) throw ValidationError("lead must be at least one tick");
  EarlyWarningScore s;
  for (const auto& e : threshold_crossing_events(actual, bound)) {
    ++s.events;
    bool hit = false;
    for (std::size_t k = lead; k <= e.tick && !hit; ++k) {
      const auto f = forecast(e.tick - k);
      if (k > f.size()) break;
      hit = f[k - 1] > bound;
    }
    s.hits += hit ? 1 : 0;
  }
  return s;
}

}  // namespace cloudalloc
