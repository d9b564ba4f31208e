#pragma once

#include <cmath>
#include <vector>

#include "stillact/nn/layers.hpp"

namespace stillact {

/// Adam with decoupled weight decay: the decay step multiplies parameters by
/// (1 - lr*wd) independently of the gradient-driven update.
template <typename T>
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  explicit AdamW(const std::vector<ParamRef<T>>& params, Options opts = {})
      : params_(params), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.value->shape());
      v_.emplace_back(p.value->shape());
    }
  }

  const Options& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }

  void step() {
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(opts_.beta1, t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(opts_.beta2, t_));
    const T decay = T(1) - static_cast<T>(opts_.lr * opts_.weight_decay);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<T>& value = *params_[k].value;
      const Tensor<T>& grad = *params_[k].grad;
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = static_cast<T>(opts_.beta1) * m[i] + (T(1) - static_cast<T>(opts_.beta1)) * grad[i];
        v[i] = static_cast<T>(opts_.beta2) * v[i] +
               (T(1) - static_cast<T>(opts_.beta2)) * grad[i] * grad[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        value[i] = value[i] * decay -
                   static_cast<T>(opts_.lr) * mhat / (std::sqrt(vhat) + static_cast<T>(opts_.eps));
      }
    }
  }

 private:
  std::vector<ParamRef<T>> params_;
  Options opts_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
};

}  // namespace stillact
