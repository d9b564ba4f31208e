#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/core/error.hpp"
#include "stillact/core/tensor.hpp"

namespace stillact {

/// Counts with rows = true class, columns = predicted class.
struct ConfusionMatrix {
  std::vector<std::string> class_order;
  std::vector<std::uint64_t> counts;  // C*C row-major

  std::size_t classes() const { return class_order.size(); }
  std::uint64_t& at(std::size_t t, std::size_t p) { return counts[t * classes() + p]; }
  std::uint64_t at(std::size_t t, std::size_t p) const { return counts[t * classes() + p]; }
  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
};

/// Accuracy plus macro-averaged precision/recall/F1. Per-class values with a
/// zero denominator are scored 0 and flagged, not dropped from the average.
struct MetricReport {
  double accuracy = 0.0;
  double precision_macro = 0.0;
  double recall_macro = 0.0;
  double f1_macro = 0.0;
  bool zero_division_hit = false;
};

inline ConfusionMatrix confusion(const std::vector<std::size_t>& y_true,
                                 const std::vector<std::size_t>& y_pred,
                                 const std::vector<std::string>& class_order) {
  require(!y_true.empty(), "confusion: empty input");
  require(y_true.size() == y_pred.size(), "confusion: length mismatch");
  ConfusionMatrix cm;
  cm.class_order = class_order;
  cm.counts.assign(class_order.size() * class_order.size(), 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] >= class_order.size())
      throw Error("confusion: y_true[" + std::to_string(i) + "] out of range");
    if (y_pred[i] >= class_order.size())
      throw Error("confusion: y_pred[" + std::to_string(i) + "] out of range");
    cm.at(y_true[i], y_pred[i])++;
  }
  return cm;
}

inline MetricReport metrics_from_confusion(const ConfusionMatrix& cm) {
  const std::size_t c = cm.classes();
  require(c >= 1 && cm.counts.size() == c * c, "metrics: malformed confusion matrix");
  const std::uint64_t total = cm.total();
  require(total > 0, "metrics: empty confusion matrix");

  MetricReport rep;
  std::uint64_t trace = 0;
  double psum = 0, rsum = 0, fsum = 0;
  for (std::size_t k = 0; k < c; ++k) {
    trace += cm.at(k, k);
    std::uint64_t tp = cm.at(k, k), fp = 0, fn = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      fp += cm.at(j, k);
      fn += cm.at(k, j);
    }
    double precision = 0, recall = 0, f1 = 0;
    if (tp + fp == 0 || tp + fn == 0) rep.zero_division_hit = true;
    if (tp + fp > 0) precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (precision + recall > 0) f1 = 2 * precision * recall / (precision + recall);
    else rep.zero_division_hit = true;
    psum += precision;
    rsum += recall;
    fsum += f1;
  }
  rep.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  rep.precision_macro = psum / static_cast<double>(c);
  rep.recall_macro = rsum / static_cast<double>(c);
  rep.f1_macro = fsum / static_cast<double>(c);
  return rep;
}

inline nlohmann::json metrics_to_json(const MetricReport& m, const ConfusionMatrix& cm) {
  nlohmann::json conf = nlohmann::json::array();
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < cm.classes(); ++p) row.push_back(cm.at(t, p));
    conf.push_back(row);
  }
  return nlohmann::json{{"accuracy", m.accuracy},
                        {"precision_macro", m.precision_macro},
                        {"recall_macro", m.recall_macro},
                        {"f1_macro", m.f1_macro},
                        {"zero_division_hit", m.zero_division_hit},
                        {"confusion", conf},
                        {"class_order", cm.class_order}};
}

}  // namespace stillact
