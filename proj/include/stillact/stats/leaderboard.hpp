#pragma once

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/core/error.hpp"

namespace stillact {

/// Mean and sample sigma for each metric of one model family over k repeats.
struct AggregateMetrics {
  std::string family;
  double accuracy_mean = 0, accuracy_sd = 0;
  double precision_mean = 0, precision_sd = 0;
  double recall_mean = 0, recall_sd = 0;
  double f1_mean = 0, f1_sd = 0;
  std::size_t repeats = 0;
  bool partial = false;  // true when some repeats aborted
};

struct Leaderboard {
  std::vector<AggregateMetrics> rows;  // sorted: accuracy desc, f1 desc, name asc
};

inline Leaderboard build_leaderboard(std::vector<AggregateMetrics> results) {
  require(!results.empty(), "leaderboard: no results");
  std::set<std::string> seen;
  for (const auto& r : results)
    require(seen.insert(r.family).second, "leaderboard: duplicate family " + r.family);
  std::sort(results.begin(), results.end(), [](const AggregateMetrics& a, const AggregateMetrics& b) {
    if (a.accuracy_mean != b.accuracy_mean) return a.accuracy_mean > b.accuracy_mean;
    if (a.f1_mean != b.f1_mean) return a.f1_mean > b.f1_mean;
    return a.family < b.family;
  });
  return Leaderboard{std::move(results)};
}

inline std::string leaderboard_csv(const Leaderboard& lb) {
  std::ostringstream os;
  os << "family,accuracy_mean,accuracy_sigma,precision_mean,precision_sigma,"
        "recall_mean,recall_sigma,f1_mean,f1_sigma,repeats,partial\n";
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const auto& r : lb.rows)
    os << r.family << ',' << r.accuracy_mean << ',' << r.accuracy_sd << ',' << r.precision_mean
       << ',' << r.precision_sd << ',' << r.recall_mean << ',' << r.recall_sd << ',' << r.f1_mean
       << ',' << r.f1_sd << ',' << r.repeats << ',' << (r.partial ? 1 : 0) << '\n';
  return os.str();
}

inline nlohmann::json aggregate_to_json(const AggregateMetrics& r) {
  return nlohmann::json{{"family", r.family},
                        {"accuracy", {{"mean", r.accuracy_mean}, {"sigma", r.accuracy_sd}}},
                        {"precision", {{"mean", r.precision_mean}, {"sigma", r.precision_sd}}},
                        {"recall", {{"mean", r.recall_mean}, {"sigma", r.recall_sd}}},
                        {"f1", {{"mean", r.f1_mean}, {"sigma", r.f1_sd}}},
                        {"repeats", r.repeats},
                        {"partial", r.partial}};
}

inline AggregateMetrics aggregate_from_json(const nlohmann::json& j) {
  AggregateMetrics r;
  r.family = j.at("family").get<std::string>();
  r.accuracy_mean = j.at("accuracy").at("mean").get<double>();
  r.accuracy_sd = j.at("accuracy").at("sigma").get<double>();
  r.precision_mean = j.at("precision").at("mean").get<double>();
  r.precision_sd = j.at("precision").at("sigma").get<double>();
  r.recall_mean = j.at("recall").at("mean").get<double>();
  r.recall_sd = j.at("recall").at("sigma").get<double>();
  r.f1_mean = j.at("f1").at("mean").get<double>();
  r.f1_sd = j.at("f1").at("sigma").get<double>();
  r.repeats = j.at("repeats").get<std::size_t>();
  r.partial = j.at("partial").get<bool>();
  return r;
}

}  // namespace stillact
