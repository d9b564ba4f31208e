#pragma once

#include <memory>
#include <string>
#include <vector>

#include "stillact/backbone/transformer.hpp"

namespace stillact {

struct VisionConfig {
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t patch_size = 4;
  std::size_t resolution = 16;
  std::size_t mlp_ratio = 4;
  std::size_t embedding_dim = 32;  // output width after projection
  std::string activation = "gelu";  // gelu | quick_gelu | gelu_tanh
  std::string pooling = "cls";     // cls | mean | map
  bool ln_pre = true;
  bool projection = true;
  double ln_eps = 1e-5;
};

/// Patch-embedding transformer encoder producing one embedding per image.
/// Fully differentiable; when a trace is attached, every block's attention
/// probabilities (forward) and attention gradients (backward) are recorded.
template <typename T>
class VisionTower : public Layer<T> {
 public:
  explicit VisionTower(const VisionConfig& cfg)
      : cfg_(cfg), patch_(3, cfg.width, cfg.patch_size, cfg.patch_size, 0),
        ln_pre_(cfg.width, static_cast<T>(cfg.ln_eps)),
        ln_post_(cfg.width, static_cast<T>(cfg.ln_eps)),
        proj_(cfg.width, cfg.projection ? cfg.embedding_dim : cfg.width),
        cls_token_({1, cfg.width}), dcls_token_({1, cfg.width}),
        map_attn_(cfg.width, cfg.heads, false),
        map_ln_(cfg.width, static_cast<T>(cfg.ln_eps)),
        map_fc1_(cfg.width, cfg.width * cfg.mlp_ratio),
        map_act_(gelu_kind_from_string(cfg.activation)),
        map_fc2_(cfg.width * cfg.mlp_ratio, cfg.width),
        probe_({1, cfg.width}), dprobe_({1, cfg.width}) {
    require(cfg.resolution % cfg.patch_size == 0, "vision tower: patch size must divide resolution");
    require(cfg.pooling == "cls" || cfg.pooling == "mean" || cfg.pooling == "map",
            "vision tower: unknown pooling '" + cfg.pooling + "'");
    pos_embed_ = Tensor<T>({token_count(), cfg.width});
    dpos_embed_ = Tensor<T>({token_count(), cfg.width});
    for (std::size_t i = 0; i < cfg.layers; ++i)
      blocks_.push_back(std::make_unique<TransformerBlock<T>>(
          cfg.width, cfg.heads, cfg.width * cfg.mlp_ratio, gelu_kind_from_string(cfg.activation),
          false, static_cast<T>(cfg.ln_eps)));
  }

  std::string kind() const override { return "vision_tower"; }
  const VisionConfig& config() const { return cfg_; }
  std::size_t grid() const { return cfg_.resolution / cfg_.patch_size; }
  std::size_t patch_tokens() const { return grid() * grid(); }
  std::size_t token_count() const { return patch_tokens() + (cfg_.pooling == "cls" ? 1 : 0); }
  std::size_t output_dim() const { return cfg_.projection ? cfg_.embedding_dim : cfg_.width; }
  bool has_cls() const { return cfg_.pooling == "cls"; }

  void set_trace(AttentionTrace<T>* trace) { trace_ = trace; }

  Tensor<T> forward(const Tensor<T>& x, Context& ctx) override {
    require(x.rank() == 4 && x.dim(1) == 3 && x.dim(2) == cfg_.resolution &&
                x.dim(3) == cfg_.resolution,
            "vision tower: expected (B,3," + std::to_string(cfg_.resolution) + "," +
                std::to_string(cfg_.resolution) + "), got " + x.shape_str());
    const std::size_t b = x.dim(0);
    b_ = b;
    if (trace_ && trace_->capture) trace_->reset();

    const Tensor<T> fmap = patch_.forward(x, ctx);  // (B, W, P, P)
    const std::size_t t = token_count(), w = cfg_.width, p2 = patch_tokens();
    Tensor<T> seq({b, t, w});
    const std::size_t off = has_cls() ? 1 : 0;
    for (std::size_t n = 0; n < b; ++n) {
      if (has_cls())
        for (std::size_t d = 0; d < w; ++d) seq.at(n, 0, d) = cls_token_.at(0, d);
      for (std::size_t pi = 0; pi < p2; ++pi)
        for (std::size_t d = 0; d < w; ++d)
          seq.at(n, pi + off, d) = fmap.at(n, d, pi / grid(), pi % grid());
    }
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t d = 0; d < w; ++d) seq.at(n, i, d) += pos_embed_.at(i, d);

    if (cfg_.ln_pre) seq = ln_pre_.forward(seq, ctx);
    for (auto& blk : blocks_) {
      seq = blk->forward(seq, ctx);
      if (trace_ && trace_->capture) trace_->maps.push_back(blk->attention());
    }
    seq = ln_post_.forward(seq, ctx);
    seq_tokens_ = t;

    Tensor<T> pooled({b, w});
    if (cfg_.pooling == "cls") {
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t d = 0; d < w; ++d) pooled.at(n, d) = seq.at(n, 0, d);
    } else if (cfg_.pooling == "mean") {
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t d = 0; d < w; ++d) {
          T acc{};
          for (std::size_t i = 0; i < t; ++i) acc += seq.at(n, i, d);
          pooled.at(n, d) = acc / static_cast<T>(t);
        }
    } else {  // map: probe attention + mlp residual, then token 0
      Tensor<T> probe_b({b, 1, w});
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t d = 0; d < w; ++d) probe_b.at(n, 0, d) = probe_.at(0, d);
      map_x_ = map_attn_.forward(probe_b, seq, ctx);  // (B,1,W)
      Tensor<T> normed = map_ln_.forward(map_x_, ctx);
      Tensor<T> m = map_fc2_.forward(
          map_act_.forward(map_fc1_.forward(normed.reshaped({b, w}), ctx), ctx), ctx);
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t d = 0; d < w; ++d) pooled.at(n, d) = map_x_.at(n, 0, d) + m.at(n, d);
    }
    return cfg_.projection ? proj_.forward(pooled, ctx) : pooled;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const std::size_t b = b_, t = seq_tokens_, w = cfg_.width, p2 = patch_tokens();
    Tensor<T> dpooled = cfg_.projection ? proj_.backward(dy) : dy;

    Tensor<T> dseq({b, t, w});
    if (cfg_.pooling == "cls") {
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t d = 0; d < w; ++d) dseq.at(n, 0, d) = dpooled.at(n, d);
    } else if (cfg_.pooling == "mean") {
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t d = 0; d < w; ++d)
            dseq.at(n, i, d) = dpooled.at(n, d) / static_cast<T>(t);
    } else {
      Tensor<T> dmap_x = dpooled.reshaped({b, 1, w});  // residual branch
      Tensor<T> dm = map_fc1_.backward(map_act_.backward(map_fc2_.backward(dpooled)));
      Tensor<T> dnormed = map_ln_.backward(dm.reshaped({b, 1, w}));
      for (std::size_t i = 0; i < dmap_x.size(); ++i) dmap_x[i] += dnormed[i];
      auto [dprobe_b, dkv] = map_attn_.backward(dmap_x);
      dseq = dkv;
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t d = 0; d < w; ++d) dprobe_.at(0, d) += dprobe_b.at(n, 0, d);
    }

    dseq = ln_post_.backward(dseq);
    if (trace_ && trace_->capture) trace_->grads.assign(blocks_.size(), Tensor<T>());
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      Tensor<T>* grad_slot =
          (trace_ && trace_->capture) ? &trace_->grads[i] : nullptr;
      dseq = blocks_[i]->backward(dseq, grad_slot);
    }
    if (cfg_.ln_pre) dseq = ln_pre_.backward(dseq);

    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t d = 0; d < w; ++d) dpos_embed_.at(i, d) += dseq.at(n, i, d);

    const std::size_t off = has_cls() ? 1 : 0;
    Tensor<T> dfmap({b, w, grid(), grid()});
    for (std::size_t n = 0; n < b; ++n) {
      if (has_cls())
        for (std::size_t d = 0; d < w; ++d) dcls_token_.at(0, d) += dseq.at(n, 0, d);
      for (std::size_t pi = 0; pi < p2; ++pi)
        for (std::size_t d = 0; d < w; ++d)
          dfmap.at(n, d, pi / grid(), pi % grid()) = dseq.at(n, pi + off, d);
    }
    return patch_.backward(dfmap);
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    patch_.collect_params(prefix + "patch_embed.", out);
    if (has_cls()) out.push_back({prefix + "cls_token", &cls_token_, &dcls_token_});
    out.push_back({prefix + "pos_embed", &pos_embed_, &dpos_embed_});
    if (cfg_.ln_pre) ln_pre_.collect_params(prefix + "ln_pre.", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i]->collect_params(prefix + "blocks." + std::to_string(i) + ".", out);
    ln_post_.collect_params(prefix + "ln_post.", out);
    if (cfg_.pooling == "map") {
      out.push_back({prefix + "pool.probe", &probe_, &dprobe_});
      map_attn_.collect_params(prefix + "pool.attn.", out);
      map_ln_.collect_params(prefix + "pool.ln.", out);
      map_fc1_.collect_params(prefix + "pool.mlp.fc1.", out);
      map_fc2_.collect_params(prefix + "pool.mlp.fc2.", out);
    }
    if (cfg_.projection) proj_.collect_params(prefix + "proj.", out);
  }

 private:
  VisionConfig cfg_;
  Conv2d<T> patch_;
  LayerNorm<T> ln_pre_, ln_post_;
  Linear<T> proj_;
  Tensor<T> cls_token_, dcls_token_, pos_embed_, dpos_embed_;
  std::vector<std::unique_ptr<TransformerBlock<T>>> blocks_;
  MultiHeadAttention<T> map_attn_;
  LayerNorm<T> map_ln_;
  Linear<T> map_fc1_;
  Gelu<T> map_act_;
  Linear<T> map_fc2_;
  Tensor<T> probe_, dprobe_, map_x_;
  AttentionTrace<T>* trace_ = nullptr;
  std::size_t b_ = 0, seq_tokens_ = 0;
};

struct TextConfig {
  std::size_t width = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t context_length = 16;
  std::size_t vocab_size = 64;
  std::size_t mlp_ratio = 4;
  std::size_t embedding_dim = 32;
  std::string activation = "gelu";
  bool causal = true;
  std::string pooling = "eot";  // eot | mean
  bool projection = true;
  double ln_eps = 1e-5;
};

/// Token-sequence encoder for label prompts. Inference-only: prompt
/// embeddings are always extracted from frozen weights. Each prompt is
/// encoded at its own length, which matches fixed-length padded encodings
/// for a causal tower pooled at the end-of-text position.
template <typename T>
class TextTower {
 public:
  explicit TextTower(const TextConfig& cfg)
      : cfg_(cfg), token_embedding_({cfg.vocab_size, cfg.width}),
        dtoken_embedding_({cfg.vocab_size, cfg.width}),
        pos_embed_({cfg.context_length, cfg.width}), dpos_embed_({cfg.context_length, cfg.width}),
        ln_final_(cfg.width, static_cast<T>(cfg.ln_eps)),
        proj_(cfg.width, cfg.projection ? cfg.embedding_dim : cfg.width) {
    for (std::size_t i = 0; i < cfg.layers; ++i)
      blocks_.push_back(std::make_unique<TransformerBlock<T>>(
          cfg.width, cfg.heads, cfg.width * cfg.mlp_ratio, gelu_kind_from_string(cfg.activation),
          cfg.causal, static_cast<T>(cfg.ln_eps)));
  }

  const TextConfig& config() const { return cfg_; }
  std::size_t output_dim() const { return cfg_.projection ? cfg_.embedding_dim : cfg_.width; }

  /// Encodes one token sequence to a d-vector.
  Tensor<T> encode(const std::vector<int>& ids) {
    require(!ids.empty(), "text tower: empty token sequence");
    require(ids.size() <= cfg_.context_length,
            "text tower: sequence longer than context (" + std::to_string(ids.size()) + " > " +
                std::to_string(cfg_.context_length) + ")");
    const std::size_t t = ids.size(), w = cfg_.width;
    Tensor<T> seq({1, t, w});
    for (std::size_t i = 0; i < t; ++i) {
      require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < cfg_.vocab_size,
              "text tower: token id out of range");
      for (std::size_t d = 0; d < w; ++d)
        seq.at(0, i, d) = token_embedding_.at(static_cast<std::size_t>(ids[i]), d) +
                          pos_embed_.at(i, d);
    }
    Context ctx{false, nullptr};
    for (auto& blk : blocks_) seq = blk->forward(seq, ctx);
    seq = ln_final_.forward(seq, ctx);

    Tensor<T> pooled({1, w});
    if (cfg_.pooling == "eot") {
      for (std::size_t d = 0; d < w; ++d) pooled.at(0, d) = seq.at(0, t - 1, d);
    } else {
      for (std::size_t d = 0; d < w; ++d) {
        T acc{};
        for (std::size_t i = 0; i < t; ++i) acc += seq.at(0, i, d);
        pooled.at(0, d) = acc / static_cast<T>(t);
      }
    }
    Tensor<T> out = cfg_.projection ? proj_.forward(pooled, ctx) : pooled;
    return out.reshaped({out.size()});
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + "token_embedding", &token_embedding_, &dtoken_embedding_});
    out.push_back({prefix + "pos_embed", &pos_embed_, &dpos_embed_});
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i]->collect_params(prefix + "blocks." + std::to_string(i) + ".", out);
    ln_final_.collect_params(prefix + "ln_final.", out);
    if (cfg_.projection) proj_.collect_params(prefix + "proj.", out);
  }

 private:
  TextConfig cfg_;
  Tensor<T> token_embedding_, dtoken_embedding_, pos_embed_, dpos_embed_;
  std::vector<std::unique_ptr<TransformerBlock<T>>> blocks_;
  LayerNorm<T> ln_final_;
  Linear<T> proj_;
};

/// Seeded random initialization for towers built without stored weights
/// (tests and the fixture generator).
template <typename T, typename Tower>
void init_tower_random(Tower& tower, std::uint64_t seed, double scale = 0.04) {
  Rng rng(derive_seed(seed, "tower_init"));
  std::vector<ParamRef<T>> params;
  tower.collect_params("", params);
  for (auto& p : params) {
    const bool is_gain = p.name.find("gamma") != std::string::npos;
    const bool is_shift = p.name.find("beta") != std::string::npos ||
                          (p.name.size() >= 4 && p.name.rfind("bias") == p.name.size() - 4);
    if (is_gain || is_shift) continue;
    for (std::size_t i = 0; i < p.value->size(); ++i)
      (*p.value)[i] = static_cast<T>(rng.normal() * scale);
  }
}

}  // namespace stillact
