#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "stillact/core/error.hpp"
#include "stillact/core/rng.hpp"
#include "stillact/core/tensor.hpp"

// Minimal layer stack with explicit forward/backward passes. Each layer
// caches what its backward needs; gradients accumulate until zero_grads().
// Everything is single-threaded and seeded, so training runs are replayable.

namespace stillact {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

/// Non-trainable state that still belongs in checkpoints (running statistics).
template <typename T>
struct BufferRef {
  std::string name;
  Tensor<T>* value;
};

struct Context {
  bool train = false;
  Rng* rng = nullptr;  // dropout draws; required in train mode when p > 0
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, Context& ctx) = 0;
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {}
  virtual void collect_buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) {}
};

template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(std::size_t in, std::size_t out)
      : weight_({out, in}), bias_({out}), dweight_({out, in}), dbias_({out}) {}

  std::string kind() const override { return "linear"; }
  std::size_t fan_in() const { return weight_.dim(1); }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

  Tensor<T> forward(const Tensor<T>& x, Context&) override {
    require(x.rank() == 2 && x.dim(1) == weight_.dim(1),
            "linear: input " + x.shape_str() + " incompatible with weight " + weight_.shape_str());
    x_ = x;
    Tensor<T> y = matmul(x, weight_, false, true);
    for (std::size_t i = 0; i < y.dim(0); ++i)
      for (std::size_t j = 0; j < y.dim(1); ++j) y.at(i, j) += bias_[j];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    // dW += dy^T x, db += column sums, dx = dy W
    Tensor<T> dw = matmul(dy, x_, true, false);
    for (std::size_t i = 0; i < dw.size(); ++i) dweight_[i] += dw[i];
    for (std::size_t i = 0; i < dy.dim(0); ++i)
      for (std::size_t j = 0; j < dy.dim(1); ++j) dbias_[j] += dy.at(i, j);
    return matmul(dy, weight_);
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + "weight", &weight_, &dweight_});
    out.push_back({prefix + "bias", &bias_, &dbias_});
  }

 private:
  Tensor<T> weight_, bias_, dweight_, dbias_, x_;
};

namespace detail {

template <typename T>
void im2col(const T* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                    static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                      static_cast<std::ptrdiff_t>(pad);
            row[oy * wo + ox] =
                (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 &&
                 ix < static_cast<std::ptrdiff_t>(w))
                    ? x[(c * h + iy) * w + ix]
                    : T{};
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* x) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            x[(c * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
}

}  // namespace detail

template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride = 1,
         std::size_t pad = 0)
      : cin_(cin), cout_(cout), k_(kernel), stride_(stride), pad_(pad),
        weight_({cout, cin, kernel, kernel}), bias_({cout}),
        dweight_({cout, cin, kernel, kernel}), dbias_({cout}) {}

  std::string kind() const override { return "conv2d"; }
  std::size_t fan_in() const { return cin_ * k_ * k_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

  Tensor<T> forward(const Tensor<T>& x, Context&) override {
    require(x.rank() == 4 && x.dim(1) == cin_, "conv2d: expected (B," + std::to_string(cin_) +
                                                   ",H,W), got " + x.shape_str());
    x_ = x;
    const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
    require(h + 2 * pad_ >= k_ && w + 2 * pad_ >= k_, "conv2d: input smaller than kernel");
    ho_ = (h + 2 * pad_ - k_) / stride_ + 1;
    wo_ = (w + 2 * pad_ - k_) / stride_ + 1;
    Tensor<T> y({b, cout_, ho_, wo_});
    Tensor<T> cols({cin_ * k_ * k_, ho_ * wo_});
    for (std::size_t n = 0; n < b; ++n) {
      detail::im2col(x.data() + n * cin_ * h * w, cin_, h, w, k_, stride_, pad_, ho_, wo_,
                     cols.data());
      matmul_raw(weight_.data(), cols.data(), y.data() + n * cout_ * ho_ * wo_, cout_,
                 cin_ * k_ * k_, ho_ * wo_);
    }
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t c = 0; c < cout_; ++c) {
        T* plane = y.data() + (n * cout_ + c) * ho_ * wo_;
        for (std::size_t i = 0; i < ho_ * wo_; ++i) plane[i] += bias_[c];
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const std::size_t b = x_.dim(0), h = x_.dim(2), w = x_.dim(3);
    Tensor<T> dx(x_.shape());
    Tensor<T> cols({cin_ * k_ * k_, ho_ * wo_});
    Tensor<T> dcols({cin_ * k_ * k_, ho_ * wo_});
    Tensor<T> dw_local({cout_, cin_ * k_ * k_});
    for (std::size_t n = 0; n < b; ++n) {
      const T* dy_n = dy.data() + n * cout_ * ho_ * wo_;
      detail::im2col(x_.data() + n * cin_ * h * w, cin_, h, w, k_, stride_, pad_, ho_, wo_,
                     cols.data());
      // dW += dy_n (Cout, HoWo) * cols^T
      matmul_raw(dy_n, cols.data(), dw_local.data(), cout_, ho_ * wo_, cin_ * k_ * k_, false, true);
      for (std::size_t i = 0; i < dw_local.size(); ++i) dweight_[i] += dw_local[i];
      for (std::size_t c = 0; c < cout_; ++c)
        for (std::size_t i = 0; i < ho_ * wo_; ++i) dbias_[c] += dy_n[c * ho_ * wo_ + i];
      // dcols = W^T dy_n, then scatter back
      matmul_raw(weight_.data(), dy_n, dcols.data(), cin_ * k_ * k_, cout_, ho_ * wo_, true, false);
      detail::col2im(dcols.data(), cin_, h, w, k_, stride_, pad_, ho_, wo_,
                     dx.data() + n * cin_ * h * w);
    }
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + "weight", &weight_, &dweight_});
    out.push_back({prefix + "bias", &bias_, &dbias_});
  }

 private:
  std::size_t cin_, cout_, k_, stride_, pad_;
  std::size_t ho_ = 0, wo_ = 0;
  Tensor<T> weight_, bias_, dweight_, dbias_, x_;
};

template <typename T>
class MaxPool2d : public Layer<T> {
 public:
  explicit MaxPool2d(std::size_t kernel = 2, std::size_t stride = 2) : k_(kernel), s_(stride) {}

  std::string kind() const override { return "maxpool2d"; }

  Tensor<T> forward(const Tensor<T>& x, Context&) override {
    require(x.rank() == 4, "maxpool: expected rank-4 input");
    in_shape_ = x.shape();
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    require(h >= k_ && w >= k_, "maxpool: input smaller than window");
    const std::size_t ho = (h - k_) / s_ + 1, wo = (w - k_) / s_ + 1;
    Tensor<T> y({b, c, ho, wo});
    argmax_.assign(y.size(), 0);
    std::size_t oi = 0;
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* plane = x.data() + (n * c + ch) * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox, ++oi) {
            T best{};
            std::size_t best_idx = 0;
            bool first = true;
            for (std::size_t ky = 0; ky < k_; ++ky)
              for (std::size_t kx = 0; kx < k_; ++kx) {
                const std::size_t idx = (oy * s_ + ky) * w + (ox * s_ + kx);
                if (first || plane[idx] > best) {
                  best = plane[idx];
                  best_idx = idx;
                  first = false;
                }
              }
            y[oi] = best;
            argmax_[oi] = (n * c + ch) * h * w + best_idx;
          }
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx(in_shape_);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax_[i]] += dy[i];
    return dx;
  }

 private:
  std::size_t k_, s_;
  std::vector<std::size_t> argmax_;
  std::vector<std::size_t> in_shape_;
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Tensor<T> forward(const Tensor<T>& x, Context&) override {
    mask_.assign(x.size(), false);
    Tensor<T> y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] > T{}) mask_[i] = true;
      else y[i] = T{};
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!mask_[i]) dx[i] = T{};
    return dx;
  }

 private:
  std::vector<bool> mask_;
};

/// GELU in its three wild forms: exact erf, the sigmoid-scaled variant, and
/// the tanh approximation. Pretrained towers disagree on which one they used,
/// so the choice travels with the weights.
enum class GeluKind { exact, quick, tanh_approx };

inline GeluKind gelu_kind_from_string(const std::string& s) {
  if (s == "gelu") return GeluKind::exact;
  if (s == "quick_gelu") return GeluKind::quick;
  if (s == "gelu_tanh") return GeluKind::tanh_approx;
  throw Error("gelu: unknown activation '" + s + "' (gelu|quick_gelu|gelu_tanh)");
}

inline std::string to_string(GeluKind k) {
  switch (k) {
    case GeluKind::exact: return "gelu";
    case GeluKind::quick: return "quick_gelu";
    case GeluKind::tanh_approx: return "gelu_tanh";
  }
  throw Error("gelu: invalid kind enum");
}

template <typename T>
class Gelu : public Layer<T> {
 public:
  explicit Gelu(GeluKind kind = GeluKind::exact) : kind_(kind) {}
  explicit Gelu(bool quick) : kind_(quick ? GeluKind::quick : GeluKind::exact) {}
  std::string kind() const override { return to_string(kind_); }

  Tensor<T> forward(const Tensor<T>& x, Context&) override {
    x_ = x;
    Tensor<T> y = x;
    switch (kind_) {
      case GeluKind::quick:
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * sigmoid(T(1.702) * x[i]);
        break;
      case GeluKind::exact:
        for (std::size_t i = 0; i < y.size(); ++i)
          y[i] = x[i] * T(0.5) * (T(1) + std::erf(x[i] / T(1.4142135623730951)));
        break;
      case GeluKind::tanh_approx:
        for (std::size_t i = 0; i < y.size(); ++i) {
          const T u = kSqrt2OverPi * (x[i] + T(0.044715) * x[i] * x[i] * x[i]);
          y[i] = T(0.5) * x[i] * (T(1) + std::tanh(u));
        }
        break;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx = dy;
    switch (kind_) {
      case GeluKind::quick:
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const T s = sigmoid(T(1.702) * x_[i]);
          dx[i] *= s + x_[i] * T(1.702) * s * (T(1) - s);
        }
        break;
      case GeluKind::exact:
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const T cdf = T(0.5) * (T(1) + std::erf(x_[i] / T(1.4142135623730951)));
          const T pdf = std::exp(-x_[i] * x_[i] / T(2)) / T(2.5066282746310002);
          dx[i] *= cdf + x_[i] * pdf;
        }
        break;
      case GeluKind::tanh_approx:
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const T u = kSqrt2OverPi * (x_[i] + T(0.044715) * x_[i] * x_[i] * x_[i]);
          const T t = std::tanh(u);
          const T du = kSqrt2OverPi * (T(1) + T(3) * T(0.044715) * x_[i] * x_[i]);
          dx[i] *= T(0.5) * (T(1) + t) + T(0.5) * x_[i] * (T(1) - t * t) * du;
        }
        break;
    }
    return dx;
  }

 private:
  static constexpr T kSqrt2OverPi = T(0.7978845608028654);
  static T sigmoid(T v) { return T(1) / (T(1) + std::exp(-v)); }
  GeluKind kind_;
  Tensor<T> x_;
};

/// Batch normalization over the batch (and spatial) axes, one statistic per
/// feature/channel. Training normalizes by batch statistics and maintains
/// running estimates for eval, which makes eval a pure per-sample function.
template <typename T>
class BatchNorm : public Layer<T> {
 public:
  explicit BatchNorm(std::size_t features, T momentum = T(0.1), T eps = T(1e-5))
      : features_(features), momentum_(momentum), eps_(eps), gamma_({features}, T(1)),
        beta_({features}), dgamma_({features}), dbeta_({features}),
        running_mean_({features}), running_var_({features}, T(1)) {}

  std::string kind() const override { return "batchnorm"; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

  Tensor<T> forward(const Tensor<T>& x, Context& ctx) override {
    require(x.rank() == 2 || x.rank() == 4, "batchnorm: rank-2 or rank-4 input expected");
    require(x.dim(1) == features_, "batchnorm: feature count mismatch");
    x_ = x;
    train_ = ctx.train;
    const std::size_t m = group_size(x);
    Tensor<T> y(x.shape());
    mean_.assign(features_, T{});
    inv_std_.assign(features_, T{});
    if (ctx.train) {
      require(m >= 2, "batchnorm: training batch must have at least 2 elements per feature");
      std::vector<T> var(features_, T{});
      for_each_group(x, [&](std::size_t f, std::size_t idx) { mean_[f] += x[idx]; });
      for (std::size_t f = 0; f < features_; ++f) mean_[f] /= static_cast<T>(m);
      for_each_group(x, [&](std::size_t f, std::size_t idx) {
        const T d = x[idx] - mean_[f];
        var[f] += d * d;
      });
      for (std::size_t f = 0; f < features_; ++f) {
        var[f] /= static_cast<T>(m);  // biased, used for normalization
        inv_std_[f] = T(1) / std::sqrt(var[f] + eps_);
        const T unbiased = var[f] * static_cast<T>(m) / static_cast<T>(m - 1);
        running_mean_[f] = (T(1) - momentum_) * running_mean_[f] + momentum_ * mean_[f];
        running_var_[f] = (T(1) - momentum_) * running_var_[f] + momentum_ * unbiased;
      }
    } else {
      for (std::size_t f = 0; f < features_; ++f) {
        mean_[f] = running_mean_[f];
        inv_std_[f] = T(1) / std::sqrt(running_var_[f] + eps_);
      }
    }
    xhat_ = Tensor<T>(x.shape());
    for_each_group(x, [&](std::size_t f, std::size_t idx) {
      xhat_[idx] = (x[idx] - mean_[f]) * inv_std_[f];
      y[idx] = gamma_[f] * xhat_[idx] + beta_[f];
    });
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const std::size_t m = group_size(x_);
    Tensor<T> dx(x_.shape());
    std::vector<T> sum_dy(features_, T{}), sum_dy_xhat(features_, T{});
    for_each_group(x_, [&](std::size_t f, std::size_t idx) {
      sum_dy[f] += dy[idx];
      sum_dy_xhat[f] += dy[idx] * xhat_[idx];
      dbeta_[f] += dy[idx];
      dgamma_[f] += dy[idx] * xhat_[idx];
    });
    if (train_) {
      for_each_group(x_, [&](std::size_t f, std::size_t idx) {
        dx[idx] = gamma_[f] * inv_std_[f] *
                  (dy[idx] - sum_dy[f] / static_cast<T>(m) -
                   xhat_[idx] * sum_dy_xhat[f] / static_cast<T>(m));
      });
    } else {
      for_each_group(x_, [&](std::size_t f, std::size_t idx) {
        dx[idx] = dy[idx] * gamma_[f] * inv_std_[f];
      });
    }
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + "gamma", &gamma_, &dgamma_});
    out.push_back({prefix + "beta", &beta_, &dbeta_});
  }

  void collect_buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) override {
    out.push_back({prefix + "running_mean", &running_mean_});
    out.push_back({prefix + "running_var", &running_var_});
  }

 private:
  std::size_t group_size(const Tensor<T>& x) const {
    return x.rank() == 2 ? x.dim(0) : x.dim(0) * x.dim(2) * x.dim(3);
  }

  template <typename F>
  void for_each_group(const Tensor<T>& x, F&& fn) const {
    if (x.rank() == 2) {
      for (std::size_t n = 0; n < x.dim(0); ++n)
        for (std::size_t f = 0; f < features_; ++f) fn(f, n * features_ + f);
    } else {
      const std::size_t hw = x.dim(2) * x.dim(3);
      for (std::size_t n = 0; n < x.dim(0); ++n)
        for (std::size_t f = 0; f < features_; ++f) {
          const std::size_t base = (n * features_ + f) * hw;
          for (std::size_t i = 0; i < hw; ++i) fn(f, base + i);
        }
    }
  }

  std::size_t features_;
  T momentum_, eps_;
  Tensor<T> gamma_, beta_, dgamma_, dbeta_, running_mean_, running_var_;
  Tensor<T> x_, xhat_;
  std::vector<T> mean_, inv_std_;
  bool train_ = false;
};

/// Layer normalization over the last axis.
template <typename T>
class LayerNorm : public Layer<T> {
 public:
  explicit LayerNorm(std::size_t dim, T eps = T(1e-5))
      : dim_(dim), eps_(eps), gamma_({dim}, T(1)), beta_({dim}), dgamma_({dim}), dbeta_({dim}) {}

  std::string kind() const override { return "layernorm"; }

  Tensor<T> forward(const Tensor<T>& x, Context&) override {
    require(x.rank() >= 1 && x.shape().back() == dim_, "layernorm: last dim mismatch");
    const std::size_t rows = x.size() / dim_;
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(rows, T{});
    Tensor<T> y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = x.data() + r * dim_;
      T mean{};
      for (std::size_t i = 0; i < dim_; ++i) mean += row[i];
      mean /= static_cast<T>(dim_);
      T var{};
      for (std::size_t i = 0; i < dim_; ++i) var += (row[i] - mean) * (row[i] - mean);
      var /= static_cast<T>(dim_);
      const T inv = T(1) / std::sqrt(var + eps_);
      inv_std_[r] = inv;
      for (std::size_t i = 0; i < dim_; ++i) {
        xhat_[r * dim_ + i] = (row[i] - mean) * inv;
        y[r * dim_ + i] = gamma_[i] * xhat_[r * dim_ + i] + beta_[i];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const std::size_t rows = dy.size() / dim_;
    Tensor<T> dx(dy.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      T sum_g{}, sum_gx{};
      for (std::size_t i = 0; i < dim_; ++i) {
        const T g = dy[r * dim_ + i] * gamma_[i];
        sum_g += g;
        sum_gx += g * xhat_[r * dim_ + i];
        dgamma_[i] += dy[r * dim_ + i] * xhat_[r * dim_ + i];
        dbeta_[i] += dy[r * dim_ + i];
      }
      for (std::size_t i = 0; i < dim_; ++i) {
        const T g = dy[r * dim_ + i] * gamma_[i];
        dx[r * dim_ + i] = inv_std_[r] * (g - sum_g / static_cast<T>(dim_) -
                                          xhat_[r * dim_ + i] * sum_gx / static_cast<T>(dim_));
      }
    }
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + "gamma", &gamma_, &dgamma_});
    out.push_back({prefix + "beta", &beta_, &dbeta_});
  }

 private:
  std::size_t dim_;
  T eps_;
  Tensor<T> gamma_, beta_, dgamma_, dbeta_, xhat_;
  std::vector<T> inv_std_;
};

/// Inverted dropout: train-mode activations are scaled by 1/(1-p) so the
/// eval-mode forward equals the train-mode expectation.
template <typename T>
class Dropout : public Layer<T> {
 public:
  explicit Dropout(double p) : p_(p) { require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)"); }

  std::string kind() const override { return "dropout"; }
  double rate() const { return p_; }

  Tensor<T> forward(const Tensor<T>& x, Context& ctx) override {
    if (!ctx.train || p_ == 0.0) {
      active_ = false;
      return x;
    }
    require(ctx.rng != nullptr, "dropout: train mode requires an rng");
    active_ = true;
    const T scale = T(1) / static_cast<T>(1.0 - p_);
    mask_.assign(x.size(), T{});
    Tensor<T> y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!ctx.rng->bernoulli(p_)) mask_[i] = scale;
      y[i] = x[i] * mask_[i];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (!active_) return dy;
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[i];
    return dx;
  }

 private:
  double p_;
  bool active_ = false;
  std::vector<T> mask_;
};

template <typename T>
class Flatten : public Layer<T> {
 public:
  std::string kind() const override { return "flatten"; }
  Tensor<T> forward(const Tensor<T>& x, Context&) override {
    require(x.rank() >= 2, "flatten: rank >= 2 expected");
    in_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
  }
  Tensor<T> backward(const Tensor<T>& dy) override { return dy.reshaped(in_shape_); }

 private:
  std::vector<std::size_t> in_shape_;
};

/// Ordered, named layer pipeline.
template <typename T>
class Sequential : public Layer<T> {
 public:
  std::string kind() const override { return "sequential"; }

  template <typename L, typename... Args>
  L* add(const std::string& name, Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    layers_.emplace_back(name, std::move(layer));
    return raw;
  }

  Tensor<T> forward(const Tensor<T>& x, Context& ctx) override {
    Tensor<T> cur = x;
    std::size_t index = 0;
    for (auto& [name, layer] : layers_) {
      cur = layer->forward(cur, ctx);
      for (std::size_t i = 0; i < cur.size(); ++i)
        if (!std::isfinite(static_cast<double>(cur[i])))
          throw Error("forward: non-finite activation after layer " + std::to_string(index) +
                      " (" + name + ")");
      ++index;
    }
    return cur;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> cur = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = it->second->backward(cur);
    return cur;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    for (auto& [name, layer] : layers_) layer->collect_params(prefix + name + ".", out);
  }

  void collect_buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) override {
    for (auto& [name, layer] : layers_) layer->collect_buffers(prefix + name + ".", out);
  }

  std::vector<std::string> layer_kinds() const {
    std::vector<std::string> out;
    for (const auto& [name, layer] : layers_) out.push_back(layer->kind());
    return out;
  }
  std::size_t layer_count() const { return layers_.size(); }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer<T>>>> layers_;
};

template <typename T>
std::vector<ParamRef<T>> parameters_of(Layer<T>& layer) {
  std::vector<ParamRef<T>> out;
  layer.collect_params("", out);
  return out;
}

template <typename T>
std::vector<BufferRef<T>> buffers_of(Layer<T>& layer) {
  std::vector<BufferRef<T>> out;
  layer.collect_buffers("", out);
  return out;
}

template <typename T>
void zero_grads(const std::vector<ParamRef<T>>& params) {
  for (const auto& p : params) p.grad->fill(T{});
}

template <typename T>
std::size_t parameter_count(Layer<T>& layer) {
  std::size_t n = 0;
  for (const auto& p : parameters_of(layer)) n += p.value->size();
  return n;
}

/// Deep copy of parameters and buffers, for best-epoch restoration.
template <typename T>
struct StateSnapshot {
  std::vector<Tensor<T>> params;
  std::vector<Tensor<T>> buffers;
};

template <typename T>
StateSnapshot<T> snapshot_state(Layer<T>& layer) {
  StateSnapshot<T> s;
  for (const auto& p : parameters_of(layer)) s.params.push_back(*p.value);
  for (const auto& b : buffers_of(layer)) s.buffers.push_back(*b.value);
  return s;
}

template <typename T>
void restore_state(Layer<T>& layer, const StateSnapshot<T>& s) {
  auto params = parameters_of(layer);
  auto buffers = buffers_of(layer);
  require(params.size() == s.params.size() && buffers.size() == s.buffers.size(),
          "restore_state: snapshot does not match the network");
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = s.params[i];
  for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].value = s.buffers[i];
}

}  // namespace stillact
