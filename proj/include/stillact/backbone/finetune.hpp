#pragma once

#include <memory>

#include "stillact/backbone/handle.hpp"
#include "stillact/backbone/towers.hpp"

namespace stillact {

/// A vision tower with a fresh C-way affine head. Every backbone parameter
/// trains by default; freeze_backbone() restricts the optimizer to the head
/// (backward still flows through the tower so saliency works either way).
template <typename T>
class FinetuneModel : public Layer<T> {
 public:
  FinetuneModel(std::shared_ptr<VisionTower<T>> tower, std::size_t classes, std::uint64_t seed)
      : tower_(std::move(tower)), head_(tower_->output_dim(), classes), classes_(classes) {
    Rng rng(derive_seed(seed, "head_init"));
    for (auto& v : head_.weight().vec()) v = static_cast<T>(rng.normal() * 0.02);
  }

  std::string kind() const override { return "finetune_model"; }
  std::size_t classes() const { return classes_; }
  VisionTower<T>& tower() { return *tower_; }
  void freeze_backbone(bool freeze) { frozen_ = freeze; }
  bool backbone_frozen() const { return frozen_; }

  Tensor<T> forward(const Tensor<T>& images, Context& ctx) override {
    return head_.forward(tower_->forward(images, ctx), ctx);
  }

  Tensor<T> backward(const Tensor<T>& dlogits) override {
    return tower_->backward(head_.backward(dlogits));
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    if (!frozen_) tower_->collect_params(prefix + "tower.", out);
    head_.collect_params(prefix + "head.", out);
  }

 private:
  std::shared_ptr<VisionTower<T>> tower_;
  Linear<T> head_;
  std::size_t classes_;
  bool frozen_ = false;
};

/// Deep-copies the handle's vision tower and attaches a seeded head, so the
/// frozen-embedding paths never observe fine-tuning updates.
inline FinetuneModel<float> attach_head(const BackboneHandle& handle, std::size_t classes,
                                        std::uint64_t seed) {
  require(classes >= 2, "attach_head: need at least two classes");
  auto tower = std::make_shared<VisionTower<float>>(handle.vision->config());
  std::vector<ParamRef<float>> src, dst;
  handle.vision->collect_params("", src);
  tower->collect_params("", dst);
  require(src.size() == dst.size(), "attach_head: tower parameter mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = *src[i].value;
  return FinetuneModel<float>(std::move(tower), classes, seed);
}

}  // namespace stillact
