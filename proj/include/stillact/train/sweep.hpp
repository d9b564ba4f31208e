#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/augment/policy.hpp"
#include "stillact/nn/model.hpp"
#include "stillact/train/harness.hpp"

namespace stillact {

struct SweepRow {
  std::string policy;
  MetricReport val;  // validation metrics at the best epoch
};

struct SweepTable {
  std::vector<SweepRow> rows;  // sorted by val accuracy, descending
};

/// Trains one fresh CNN per augmentation policy, everything else held fixed
/// (same init seed, same splits, same schedule), and tabulates validation
/// metrics sorted by accuracy.
template <typename T>
SweepTable augmentation_sweep(
    const std::vector<std::string>& policies, const ModelConfig& cnn_config,
    const TrainConfig& base_cfg,
    const std::function<std::unique_ptr<SampleSource<T>>(const AugmentationPolicy&)>& make_train_source,
    SampleSource<T>& val_source, const std::vector<std::string>& class_order) {
  require(!policies.empty(), "sweep: no policies");
  SweepTable table;
  for (const auto& name : policies) {
    const AugmentationPolicy policy = make_policy(name);  // validates the name
    auto model = build_cnn<T>(cnn_config, false);
    auto train_src = make_train_source(policy);
    TrainConfig cfg = base_cfg;
    cfg.augmentation = name;
    const TrainLog log = train(model.net, *train_src, val_source, cfg, class_order);
    require(!log.val_metrics.empty(), "sweep: training produced no epochs for " + name);
    table.rows.push_back({name, log.val_metrics[log.best_epoch - 1]});
  }
  std::stable_sort(table.rows.begin(), table.rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.val.accuracy > b.val.accuracy;
  });
  return table;
}

inline nlohmann::json sweep_to_json(const SweepTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"policy", r.policy},
                    {"accuracy", r.val.accuracy},
                    {"precision_macro", r.val.precision_macro},
                    {"recall_macro", r.val.recall_macro},
                    {"f1_macro", r.val.f1_macro}});
  return nlohmann::json{{"rows", rows}};
}

}  // namespace stillact
