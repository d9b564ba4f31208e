#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "stillact/core/error.hpp"
#include "stillact/dataset/manifest.hpp"

namespace stillact {

struct DimensionStats {
  std::size_t count = 0;
  double percent = 0.0;          // of total, 0..100
  double width_mean = 0.0, width_sd = 0.0;
  double height_mean = 0.0, height_sd = 0.0;
  double aspect_mean = 0.0, aspect_sd = 0.0;  // aspect = width / height
  int width_min = 0, width_max = 0;
  int height_min = 0, height_max = 0;
  bool single_sample = false;    // sd forced to 0 because n == 1
};

struct EdaReport {
  std::map<Label, DimensionStats> per_class;
  DimensionStats overall;
};

namespace detail {

inline DimensionStats summarize(const std::vector<const ImageRecord*>& recs, std::size_t total) {
  DimensionStats s;
  s.count = recs.size();
  s.percent = 100.0 * static_cast<double>(recs.size()) / static_cast<double>(total);
  const double n = static_cast<double>(recs.size());
  double sw = 0, sh = 0, sa = 0;
  s.width_min = s.height_min = 1 << 30;
  s.width_max = s.height_max = 0;
  for (const auto* r : recs) {
    sw += r->width;
    sh += r->height;
    sa += static_cast<double>(r->width) / r->height;
    s.width_min = std::min(s.width_min, r->width);
    s.width_max = std::max(s.width_max, r->width);
    s.height_min = std::min(s.height_min, r->height);
    s.height_max = std::max(s.height_max, r->height);
  }
  s.width_mean = sw / n;
  s.height_mean = sh / n;
  s.aspect_mean = sa / n;
  if (recs.size() < 2) {
    s.single_sample = true;
    return s;  // sample sd undefined for n == 1, reported as 0 with the flag
  }
  double vw = 0, vh = 0, va = 0;
  for (const auto* r : recs) {
    vw += (r->width - s.width_mean) * (r->width - s.width_mean);
    vh += (r->height - s.height_mean) * (r->height - s.height_mean);
    const double a = static_cast<double>(r->width) / r->height;
    va += (a - s.aspect_mean) * (a - s.aspect_mean);
  }
  s.width_sd = std::sqrt(vw / (n - 1));
  s.height_sd = std::sqrt(vh / (n - 1));
  s.aspect_sd = std::sqrt(va / (n - 1));
  return s;
}

}  // namespace detail

/// Per-class and overall dimension statistics. Sample standard deviation
/// (n-1 denominator); aspect ratio is computed per image, then averaged.
inline EdaReport compute_eda(const DatasetManifest& m) {
  if (m.records.empty()) throw Error("eda: empty dataset");
  for (const auto& r : m.records)
    require(r.width > 0 && r.height > 0,
            "eda: record " + std::to_string(r.image_id) + " has non-positive dimensions");

  EdaReport rep;
  std::map<Label, std::vector<const ImageRecord*>> by_class;
  std::vector<const ImageRecord*> all;
  for (const auto& r : m.records) {
    by_class[r.label].push_back(&r);
    all.push_back(&r);
  }
  for (const auto& [label, recs] : by_class)
    rep.per_class[label] = detail::summarize(recs, m.records.size());
  rep.overall = detail::summarize(all, m.records.size());
  return rep;
}

inline nlohmann::json eda_to_json(const EdaReport& rep) {
  auto stats_json = [](const DimensionStats& s) {
    return nlohmann::json{{"count", s.count},
                          {"percent", s.percent},
                          {"width_mean", s.width_mean},
                          {"width_sd", s.width_sd},
                          {"height_mean", s.height_mean},
                          {"height_sd", s.height_sd},
                          {"aspect_mean", s.aspect_mean},
                          {"aspect_sd", s.aspect_sd},
                          {"width_range", {s.width_min, s.width_max}},
                          {"height_range", {s.height_min, s.height_max}},
                          {"single_sample", s.single_sample}};
  };
  nlohmann::json j;
  for (const auto& [label, s] : rep.per_class) j["per_class"][to_string(label)] = stats_json(s);
  j["overall"] = stats_json(rep.overall);
  return j;
}

}  // namespace stillact
