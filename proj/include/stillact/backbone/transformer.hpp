#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stillact/core/error.hpp"
#include "stillact/core/rng.hpp"
#include "stillact/core/tensor.hpp"
#include "stillact/nn/layers.hpp"

// Transformer encoders for the pretrained towers: a patch-based vision
// encoder and a token-based text encoder sharing the same block structure.
// Backward passes are complete (fine-tuning updates every parameter) and the
// attention layers can capture both their probabilities and the gradients
// flowing into them, which is what the saliency pass consumes.

namespace stillact {

/// Per-layer attention tensors captured during forward/backward.
template <typename T>
struct AttentionTrace {
  bool capture = false;
  std::vector<Tensor<T>> maps;   // (B, heads, Tq, Tk) per layer, forward order
  std::vector<Tensor<T>> grads;  // same shape, filled during backward

  void reset() {
    maps.clear();
    grads.clear();
  }
};

template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention(std::size_t dim, std::size_t heads, bool causal)
      : dim_(dim), heads_(heads), causal_(causal), q_(dim, dim), k_(dim, dim), v_(dim, dim),
        out_(dim, dim) {
    require(dim % heads == 0, "attention: dim must be divisible by heads");
  }

  /// q_in (B,Tq,D), kv (B,Tk,D) -> (B,Tq,D). Self-attention passes the same
  /// tensor twice; the causal mask only applies there.
  Tensor<T> forward(const Tensor<T>& q_in, const Tensor<T>& kv, Context& ctx) {
    const std::size_t b = q_in.dim(0), tq = q_in.dim(1), tk = kv.dim(1);
    b_ = b;
    tq_ = tq;
    tk_ = tk;
    const std::size_t dh = dim_ / heads_;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    q4_ = to_heads(q_.forward(q_in.reshaped({b * tq, dim_}), ctx), b, tq);
    k4_ = to_heads(k_.forward(kv.reshaped({b * tk, dim_}), ctx), b, tk);
    v4_ = to_heads(v_.forward(kv.reshaped({b * tk, dim_}), ctx), b, tk);

    attn_ = Tensor<T>({b, heads_, tq, tk});
    Tensor<T> ctx4({b, heads_, tq, dh});
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t h = 0; h < heads_; ++h) {
        const T* qb = q4_.data() + ((n * heads_ + h) * tq) * dh;
        const T* kb = k4_.data() + ((n * heads_ + h) * tk) * dh;
        const T* vb = v4_.data() + ((n * heads_ + h) * tk) * dh;
        T* ab = attn_.data() + ((n * heads_ + h) * tq) * tk;
        matmul_raw(qb, kb, ab, tq, dh, tk, false, true);
        for (std::size_t i = 0; i < tq * tk; ++i) ab[i] *= scale;
        if (causal_ && tq == tk)
          for (std::size_t i = 0; i < tq; ++i)
            for (std::size_t j = i + 1; j < tk; ++j) ab[i * tk + j] = T(-1e9);
        softmax_inplace(ab, tq, tk);
        matmul_raw(ab, vb, ctx4.data() + ((n * heads_ + h) * tq) * dh, tq, tk, dh);
      }
    return out_.forward(from_heads(ctx4, b, tq).reshaped({b * tq, dim_}), ctx)
        .reshaped({b, tq, dim_});
  }

  /// Returns (dq_in, dkv); a captured attention gradient is written to
  /// attn_grad before the softmax backward consumes it.
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dy, Tensor<T>* attn_grad = nullptr) {
    const std::size_t dh = dim_ / heads_;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Tensor<T> dctx4 = to_heads(out_.backward(dy.reshaped({b_ * tq_, dim_})), b_, tq_);

    if (attn_grad) *attn_grad = Tensor<T>({b_, heads_, tq_, tk_});
    Tensor<T> dq4({b_, heads_, tq_, dh}), dk4({b_, heads_, tk_, dh}), dv4({b_, heads_, tk_, dh});
    Tensor<T> da({tq_, tk_}), ds({tq_, tk_});
    for (std::size_t n = 0; n < b_; ++n)
      for (std::size_t h = 0; h < heads_; ++h) {
        const std::size_t qoff = ((n * heads_ + h) * tq_) * dh;
        const std::size_t koff = ((n * heads_ + h) * tk_) * dh;
        const T* ab = attn_.data() + ((n * heads_ + h) * tq_) * tk_;
        const T* dctxb = dctx4.data() + qoff;
        matmul_raw(dctxb, v4_.data() + koff, da.data(), tq_, dh, tk_, false, true);
        matmul_raw(ab, dctxb, dv4.data() + koff, tk_, tq_, dh, true, false);
        if (attn_grad)
          std::copy(da.data(), da.data() + tq_ * tk_,
                    attn_grad->data() + ((n * heads_ + h) * tq_) * tk_);
        // softmax backward per row: dS = A .* (dA - sum(dA .* A))
        for (std::size_t i = 0; i < tq_; ++i) {
          T dot{};
          for (std::size_t j = 0; j < tk_; ++j) dot += da[i * tk_ + j] * ab[i * tk_ + j];
          for (std::size_t j = 0; j < tk_; ++j)
            ds[i * tk_ + j] = ab[i * tk_ + j] * (da[i * tk_ + j] - dot);
        }
        matmul_raw(ds.data(), k4_.data() + koff, dq4.data() + qoff, tq_, tk_, dh);
        matmul_raw(ds.data(), q4_.data() + qoff, dk4.data() + koff, tk_, tq_, dh, true, false);
        for (std::size_t i = 0; i < tq_ * dh; ++i) dq4[qoff + i] *= scale;
        for (std::size_t i = 0; i < tk_ * dh; ++i) dk4[koff + i] *= scale;
      }

    Tensor<T> dq_in = q_.backward(from_heads(dq4, b_, tq_).reshaped({b_ * tq_, dim_}))
                          .reshaped({b_, tq_, dim_});
    Tensor<T> dkv = k_.backward(from_heads(dk4, b_, tk_).reshaped({b_ * tk_, dim_}))
                        .reshaped({b_, tk_, dim_});
    Tensor<T> dkv_v = v_.backward(from_heads(dv4, b_, tk_).reshaped({b_ * tk_, dim_}))
                          .reshaped({b_, tk_, dim_});
    for (std::size_t i = 0; i < dkv.size(); ++i) dkv[i] += dkv_v[i];
    return {std::move(dq_in), std::move(dkv)};
  }

  const Tensor<T>& attention() const { return attn_; }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    q_.collect_params(prefix + "q.", out);
    k_.collect_params(prefix + "k.", out);
    v_.collect_params(prefix + "v.", out);
    out_.collect_params(prefix + "out.", out);
  }

 private:
  Tensor<T> to_heads(const Tensor<T>& x2, std::size_t b, std::size_t t) const {
    const std::size_t dh = dim_ / heads_;
    Tensor<T> x4({b, heads_, t, dh});
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t h = 0; h < heads_; ++h)
          for (std::size_t d = 0; d < dh; ++d)
            x4.at(n, h, i, d) = x2.at(n * t + i, h * dh + d);
    return x4;
  }

  Tensor<T> from_heads(const Tensor<T>& x4, std::size_t b, std::size_t t) const {
    const std::size_t dh = dim_ / heads_;
    Tensor<T> x2({b * t, dim_});
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t h = 0; h < heads_; ++h)
          for (std::size_t d = 0; d < dh; ++d)
            x2.at(n * t + i, h * dh + d) = x4.at(n, h, i, d);
    return x2;
  }

  static void softmax_inplace(T* rows, std::size_t n, std::size_t width) {
    for (std::size_t i = 0; i < n; ++i) {
      T* row = rows + i * width;
      T mx = row[0];
      for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, row[j]);
      T sum{};
      for (std::size_t j = 0; j < width; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (std::size_t j = 0; j < width; ++j) row[j] /= sum;
    }
  }

  std::size_t dim_, heads_;
  bool causal_;
  Linear<T> q_, k_, v_, out_;
  std::size_t b_ = 0, tq_ = 0, tk_ = 0;
  Tensor<T> q4_, k4_, v4_, attn_;
};

/// Pre-norm transformer block: x += attn(ln1(x)); x += mlp(ln2(x)).
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock(std::size_t dim, std::size_t heads, std::size_t mlp_dim, GeluKind act,
                   bool causal, T ln_eps = T(1e-5))
      : ln1_(dim, ln_eps), ln2_(dim, ln_eps), attn_(dim, heads, causal), fc1_(dim, mlp_dim),
        act_(act), fc2_(mlp_dim, dim) {}

  Tensor<T> forward(const Tensor<T>& x, Context& ctx) {
    const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
    const Tensor<T> normed = ln1_.forward(x, ctx);
    Tensor<T> a = attn_.forward(normed, normed, ctx);
    Tensor<T> x1 = x;
    for (std::size_t i = 0; i < x1.size(); ++i) x1[i] += a[i];
    Tensor<T> m = fc2_.forward(
        act_.forward(fc1_.forward(ln2_.forward(x1, ctx).reshaped({b * t, d}), ctx), ctx), ctx);
    Tensor<T> y = x1;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += m[i];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, Tensor<T>* attn_grad = nullptr) {
    const std::size_t b = dy.dim(0), t = dy.dim(1), d = dy.dim(2);
    Tensor<T> dm = fc1_.backward(act_.backward(fc2_.backward(dy.reshaped({b * t, d}))));
    Tensor<T> dx1 = ln2_.backward(dm.reshaped({b, t, d}));
    for (std::size_t i = 0; i < dx1.size(); ++i) dx1[i] += dy[i];
    auto [dq, dkv] = attn_.backward(dx1, attn_grad);
    for (std::size_t i = 0; i < dq.size(); ++i) dq[i] += dkv[i];
    Tensor<T> dx = ln1_.backward(dq);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dx1[i];
    return dx;
  }

  const Tensor<T>& attention() const { return attn_.attention(); }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    ln1_.collect_params(prefix + "ln1.", out);
    attn_.collect_params(prefix + "attn.", out);
    ln2_.collect_params(prefix + "ln2.", out);
    fc1_.collect_params(prefix + "mlp.fc1.", out);
    fc2_.collect_params(prefix + "mlp.fc2.", out);
  }

 private:
  LayerNorm<T> ln1_, ln2_;
  MultiHeadAttention<T> attn_;
  Linear<T> fc1_;
  Gelu<T> act_;
  Linear<T> fc2_;
};

}  // namespace stillact
