#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/backbone/finetune.hpp"
#include "stillact/core/rng.hpp"

// Attention-gradient saliency: per layer, the gradient of one class logit
// with respect to the attention probabilities, negative parts clipped,
// averaged over heads, pooled at the readout row, then averaged over layers
// and min-max normalized onto the patch grid.

namespace stillact {

struct SaliencyMap {
  std::size_t grid = 0;             // patch grid side length P
  std::vector<double> values;       // P*P, row-major, in [0,1]
  std::string target_class;
  std::string normalization = "minmax";
  std::size_t layer_count = 0;
  bool all_zero = false;            // degenerate map (zero gradient everywhere)

  double at(std::size_t y, std::size_t x) const { return values[y * grid + x]; }
};

template <typename T>
SaliencyMap legrad_saliency(FinetuneModel<T>& model, const Tensor<T>& image_chw,
                            std::size_t target_class, const std::string& target_name) {
  require(target_class < model.classes(), "legrad: target class out of range");
  require(image_chw.rank() == 3, "legrad: expected one (3,R,R) image");

  auto& tower = model.tower();
  AttentionTrace<T> trace;
  trace.capture = true;
  tower.set_trace(&trace);

  Tensor<T> batch({1, image_chw.dim(0), image_chw.dim(1), image_chw.dim(2)});
  std::copy(image_chw.data(), image_chw.data() + image_chw.size(), batch.data());
  Context ctx{false, nullptr};
  const Tensor<T> logits = model.forward(batch, ctx);

  Tensor<T> dlogits(logits.shape());
  dlogits.at(0, target_class) = T(1);
  for (auto& p : parameters_of<T>(static_cast<Layer<T>&>(model))) p.grad->fill(T{});
  model.backward(dlogits);
  tower.set_trace(nullptr);

  const std::size_t p = tower.grid();
  const std::size_t patches = p * p;
  const std::size_t offset = tower.has_cls() ? 1 : 0;
  SaliencyMap map;
  map.grid = p;
  map.target_class = target_name;
  map.layer_count = trace.grads.size();
  map.values.assign(patches, 0.0);

  for (const auto& grad : trace.grads) {
    // grad: (1, heads, Tq, Tk). ReLU then head-average onto (Tq, Tk).
    const std::size_t heads = grad.dim(1), tq = grad.dim(2), tk = grad.dim(3);
    std::vector<double> head_mean(tq * tk, 0.0);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < tq * tk; ++i) {
        const double g = static_cast<double>(grad[h * tq * tk + i]);
        if (g > 0) head_mean[i] += g;
      }
    for (auto& v : head_mean) v /= static_cast<double>(heads);

    // readout pooling: the class-token row when present, else all rows
    for (std::size_t patch = 0; patch < patches; ++patch) {
      const std::size_t col = patch + offset;
      double v = 0;
      if (tower.has_cls()) {
        v = head_mean[0 * tk + col];
      } else {
        for (std::size_t row = 0; row < tq; ++row) v += head_mean[row * tk + col];
        v /= static_cast<double>(tq);
      }
      map.values[patch] += v;
    }
  }
  if (map.layer_count > 0)
    for (auto& v : map.values) v /= static_cast<double>(map.layer_count);

  const double mx = *std::max_element(map.values.begin(), map.values.end());
  const double mn = *std::min_element(map.values.begin(), map.values.end());
  if (mx <= 0.0 || mx == mn) {
    map.all_zero = true;
    std::fill(map.values.begin(), map.values.end(), 0.0);
  } else {
    for (auto& v : map.values) v = (v - mn) / (mx - mn);
  }
  return map;
}

struct DeletionCheck {
  double top_drop = 0;          // logit drop after masking the top-k patches
  double random_drop_mean = 0;  // mean drop over random k-subsets
  std::size_t trials = 0;
};

/// Masks patches (pixel fill in normalized input space) and reports the
/// target-logit drop for the top-k salient patches versus random-k baselines.
template <typename T>
DeletionCheck deletion_check(FinetuneModel<T>& model, const Tensor<T>& image_chw,
                             const SaliencyMap& map, std::size_t k, std::size_t target_class,
                             const std::array<T, 3>& mask_value, std::size_t trials = 20,
                             std::uint64_t seed = 0) {
  const std::size_t patches = map.grid * map.grid;
  require(k <= patches, "deletion: k exceeds patch count");
  auto& tower = model.tower();
  const std::size_t ps = tower.config().patch_size;

  Context ctx{false, nullptr};
  auto logit_of = [&](const Tensor<T>& img) {
    Tensor<T> batch({1, img.dim(0), img.dim(1), img.dim(2)});
    std::copy(img.data(), img.data() + img.size(), batch.data());
    return static_cast<double>(model.forward(batch, ctx).at(0, target_class));
  };
  auto masked = [&](const std::vector<std::size_t>& patch_ids) {
    Tensor<T> img = image_chw;
    for (std::size_t pid : patch_ids) {
      const std::size_t py = pid / map.grid, px = pid % map.grid;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = py * ps; y < (py + 1) * ps; ++y)
          for (std::size_t x = px * ps; x < (px + 1) * ps; ++x)
            img.at(c, y, x) = mask_value[c];
    }
    return img;
  };

  const double base = logit_of(image_chw);
  DeletionCheck out;
  out.trials = trials;
  if (k == 0) return out;

  std::vector<std::size_t> order(patches);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.values[a] > map.values[b]; });
  out.top_drop = base - logit_of(masked({order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)}));

  Rng rng(derive_seed(seed, "deletion_check"));
  double sum = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<std::size_t> ids(patches);
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(ids);
    ids.resize(k);
    sum += base - logit_of(masked(ids));
  }
  out.random_drop_mean = sum / static_cast<double>(trials);
  return out;
}

inline nlohmann::json saliency_to_json(const SaliencyMap& m) {
  nlohmann::json grid = nlohmann::json::array();
  for (std::size_t y = 0; y < m.grid; ++y) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t x = 0; x < m.grid; ++x) row.push_back(m.at(y, x));
    grid.push_back(row);
  }
  return nlohmann::json{{"grid", grid},
                        {"target_class", m.target_class},
                        {"normalization", m.normalization},
                        {"layer_count", m.layer_count},
                        {"all_zero", m.all_zero}};
}

}  // namespace stillact
