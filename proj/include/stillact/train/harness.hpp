#pragma once

#include <chrono>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/nn/loss.hpp"
#include "stillact/nn/model.hpp"
#include "stillact/nn/optimizer.hpp"
#include "stillact/stats/metrics.hpp"
#include "stillact/train/data.hpp"

namespace stillact {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;          // epochs without val macro-F1 improvement
  std::string augmentation = "baseline";
  std::uint64_t seed = 42;

  void validate() const {
    require(lr > 0, "train config: lr must be positive");
    require(batch_size >= 1, "train config: batch size must be >= 1");
    require(patience >= 1, "train config: patience must be >= 1");
    require(max_epochs >= 1, "train config: max epochs must be >= 1");
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return nlohmann::json{{"lr", c.lr},
                        {"weight_decay", c.weight_decay},
                        {"batch_size", c.batch_size},
                        {"max_epochs", c.max_epochs},
                        {"patience", c.patience},
                        {"augmentation", c.augmentation},
                        {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.augmentation = j.at("augmentation").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

struct TrainLog {
  std::vector<double> train_loss;          // one entry per completed epoch
  std::vector<MetricReport> val_metrics;   // parallel to train_loss
  std::size_t best_epoch = 0;              // 1-based
  std::size_t stopped_epoch = 0;           // 1-based, last epoch that ran
  double wall_seconds = 0;
  bool aborted = false;
  std::string abort_reason;
};

inline nlohmann::json trainlog_to_json(const TrainLog& l) {
  nlohmann::json vals = nlohmann::json::array();
  for (const auto& m : l.val_metrics)
    vals.push_back({{"accuracy", m.accuracy},
                    {"precision_macro", m.precision_macro},
                    {"recall_macro", m.recall_macro},
                    {"f1_macro", m.f1_macro}});
  return nlohmann::json{{"train_loss", l.train_loss}, {"val_metrics", vals},
                        {"best_epoch", l.best_epoch}, {"stopped_epoch", l.stopped_epoch},
                        {"wall_seconds", l.wall_seconds}, {"aborted", l.aborted},
                        {"abort_reason", l.abort_reason}};
}

struct Prediction {
  std::size_t sample = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;
  double confidence = 0;  // softmax probability of the predicted class
};

template <typename T>
struct EvalResult {
  MetricReport metrics;
  ConfusionMatrix cm;
  std::vector<Prediction> predictions;
};

/// Eval-mode pass over a source: confusion matrix, metrics, per-sample
/// predictions with confidences.
template <typename T>
EvalResult<T> evaluate(Layer<T>& net, SampleSource<T>& src,
                       const std::vector<std::string>& class_order,
                       std::size_t batch_size = 32) {
  require(src.size() > 0, "evaluate: empty source");
  Context ctx{false, nullptr};
  std::vector<std::size_t> y_true, y_pred;
  EvalResult<T> out;
  for (std::size_t start = 0; start < src.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(src.size(), start + batch_size); ++i) idx.push_back(i);
    const auto logits = net.forward(src.batch(idx, false, 0), ctx);
    const auto probs = softmax_rows(logits);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t pred = argmax_row(probs, k);
      y_true.push_back(src.label(idx[k]));
      y_pred.push_back(pred);
      out.predictions.push_back({idx[k], src.label(idx[k]), pred,
                                 static_cast<double>(probs.at(k, pred))});
    }
  }
  out.cm = confusion(y_true, y_pred, class_order);
  out.metrics = metrics_from_confusion(out.cm);
  return out;
}

/// Deterministic training loop: cross-entropy, decoupled weight decay, early
/// stopping on validation macro-F1, best-epoch state restoration. Every
/// random draw derives from cfg.seed, so one thread means one trajectory.
template <typename T>
TrainLog train(Layer<T>& net, SampleSource<T>& train_src, SampleSource<T>& val_src,
               const TrainConfig& cfg, const std::vector<std::string>& class_order) {
  cfg.validate();
  require(train_src.size() > 0 && val_src.size() > 0, "train: empty data source");
  const auto t0 = std::chrono::steady_clock::now();

  auto params = parameters_of(net);
  typename AdamW<T>::Options opts;
  opts.lr = cfg.lr;
  opts.weight_decay = cfg.weight_decay;
  AdamW<T> optimizer(params, opts);

  TrainLog log;
  double best_f1 = -1.0;
  StateSnapshot<T> best_state = snapshot_state(net);
  std::size_t bad_epochs = 0;

  std::vector<std::size_t> order(train_src.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "epoch_shuffle", epoch));
    shuffle_rng.shuffle(order);
    Rng dropout_rng(derive_seed(cfg.seed, "dropout", epoch));
    Context train_ctx{true, &dropout_rng};

    double loss_sum = 0;
    std::size_t seen = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        std::vector<std::size_t> idx(order.begin() + start,
                                     order.begin() + std::min(order.size(), start + cfg.batch_size));
        std::vector<std::size_t> labels;
        for (auto i : idx) labels.push_back(train_src.label(i));
        const auto logits = net.forward(train_src.batch(idx, true, epoch), train_ctx);
        Tensor<T> dlogits;
        const T loss = softmax_cross_entropy(logits, labels, &dlogits);
        if (!std::isfinite(static_cast<double>(loss)))
          throw Error("train: non-finite loss at epoch " + std::to_string(epoch));
        zero_grads(params);
        net.backward(dlogits);
        optimizer.step();
        loss_sum += static_cast<double>(loss) * static_cast<double>(idx.size());
        seen += idx.size();
      }
    } catch (const Error& e) {
      // divergence: stop here, keep the last finite epoch in the log
      log.aborted = true;
      log.abort_reason = e.what();
      break;
    }

    log.train_loss.push_back(loss_sum / static_cast<double>(seen));
    log.val_metrics.push_back(evaluate(net, val_src, class_order, cfg.batch_size).metrics);
    log.stopped_epoch = epoch;

    if (log.val_metrics.back().f1_macro > best_f1) {
      best_f1 = log.val_metrics.back().f1_macro;
      log.best_epoch = epoch;
      best_state = snapshot_state(net);
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= cfg.patience) break;
    }
  }

  restore_state(net, best_state);
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

}  // namespace stillact
