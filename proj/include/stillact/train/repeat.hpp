#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stillact/core/rng.hpp"
#include "stillact/stats/leaderboard.hpp"
#include "stillact/stats/metrics.hpp"

namespace stillact {

/// Test metrics of k seeded repetitions of one configuration.
struct RunResult {
  std::string family;
  std::vector<MetricReport> repeats;       // completed repeats only
  std::vector<std::uint64_t> repeat_seeds;  // all k derived seeds
  bool partial = false;                     // some repeat aborted
  AggregateMetrics aggregate;
};

namespace detail {

inline void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) {
    sd = 0;
    return;
  }
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

inline AggregateMetrics aggregate_metrics(const std::string& family,
                                          const std::vector<MetricReport>& repeats, bool partial) {
  require(!repeats.empty(), "aggregate: no completed repeats");
  AggregateMetrics agg;
  agg.family = family;
  agg.repeats = repeats.size();
  agg.partial = partial;
  std::vector<double> acc, prec, rec, f1;
  for (const auto& m : repeats) {
    acc.push_back(m.accuracy);
    prec.push_back(m.precision_macro);
    rec.push_back(m.recall_macro);
    f1.push_back(m.f1_macro);
  }
  detail::mean_sd(acc, agg.accuracy_mean, agg.accuracy_sd);
  detail::mean_sd(prec, agg.precision_mean, agg.precision_sd);
  detail::mean_sd(rec, agg.recall_mean, agg.recall_sd);
  detail::mean_sd(f1, agg.f1_mean, agg.f1_sd);
  return agg;
}

/// Runs one configuration k times with derived seeds and aggregates the test
/// metrics. run_one returns the test MetricReport for a repeat, or nothing if
/// that repeat aborted; aborted repeats mark the result partial and are
/// excluded from the statistics.
inline RunResult repeat_runs(
    const std::string& family, std::uint64_t base_seed, std::size_t k,
    const std::function<std::optional<MetricReport>(std::size_t repeat, std::uint64_t seed)>& run_one) {
  require(k >= 2, "repeat_runs: k must be >= 2");
  RunResult result;
  result.family = family;
  for (std::size_t i = 0; i < k; ++i) {
    const std::uint64_t seed = derive_seed(base_seed, "repeat", i);
    result.repeat_seeds.push_back(seed);
    auto metrics = run_one(i, seed);
    if (metrics.has_value()) result.repeats.push_back(*metrics);
    else result.partial = true;
  }
  require(!result.repeats.empty(), "repeat_runs: every repeat aborted");
  result.aggregate = aggregate_metrics(family, result.repeats, result.partial);
  return result;
}

}  // namespace stillact
