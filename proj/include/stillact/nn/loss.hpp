#pragma once

#include <cmath>
#include <vector>

#include "stillact/core/error.hpp"
#include "stillact/core/tensor.hpp"

namespace stillact {

/// Row-wise stable softmax.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  require(logits.rank() == 2, "softmax: rank-2 logits expected");
  Tensor<T> p = logits;
  const std::size_t b = p.dim(0), c = p.dim(1);
  for (std::size_t i = 0; i < b; ++i) {
    T mx = p.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, p.at(i, j));
    T sum{};
    for (std::size_t j = 0; j < c; ++j) {
      p.at(i, j) = std::exp(p.at(i, j) - mx);
      sum += p.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) p.at(i, j) /= sum;
  }
  return p;
}

/// Mean cross-entropy over the batch; writes d(loss)/d(logits) if requested.
template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels,
                        Tensor<T>* dlogits = nullptr, Tensor<T>* probs_out = nullptr) {
  require(logits.rank() == 2 && logits.dim(0) == labels.size(),
          "cross_entropy: logits/labels shape mismatch");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  Tensor<T> probs = softmax_rows(logits);
  T loss{};
  for (std::size_t i = 0; i < b; ++i) {
    require(labels[i] < c, "cross_entropy: label out of range");
    loss -= std::log(std::max(probs.at(i, labels[i]), T(1e-30)));
  }
  loss /= static_cast<T>(b);
  if (dlogits) {
    *dlogits = probs;
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < c; ++j) dlogits->at(i, j) /= static_cast<T>(b);
      dlogits->at(i, labels[i]) -= T(1) / static_cast<T>(b);
    }
  }
  if (probs_out) *probs_out = std::move(probs);
  return loss;
}

template <typename T>
std::size_t argmax_row(const Tensor<T>& m, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < m.dim(1); ++j)
    if (m.at(row, j) > m.at(row, best)) best = j;
  return best;
}

}  // namespace stillact
