#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stillact/augment/transforms.hpp"
#include "stillact/core/image.hpp"
#include "stillact/core/tensor.hpp"
#include "stillact/dataset/download.hpp"
#include "stillact/dataset/manifest.hpp"
#include "stillact/dataset/split.hpp"

namespace stillact {

/// Training-time view of a dataset: indexed samples with integer labels.
/// input() may be stochastic in train mode (augmentation); the per-sample
/// seed is derived from (source seed, sample key, epoch) so worker order
/// can never change the pixels a sample sees.
template <typename T>
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t label(std::size_t i) const = 0;
  virtual std::vector<std::size_t> sample_shape() const = 0;
  virtual Tensor<T> input(std::size_t i, bool train, std::uint64_t epoch) = 0;

  Tensor<T> batch(const std::vector<std::size_t>& indices, bool train, std::uint64_t epoch) {
    require(!indices.empty(), "batch: empty index list");
    std::vector<std::size_t> shape{indices.size()};
    const auto ss = sample_shape();
    shape.insert(shape.end(), ss.begin(), ss.end());
    Tensor<T> out(shape);
    const std::size_t stride = out.size() / indices.size();
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const Tensor<T> s = input(indices[k], train, epoch);
      require(s.size() == stride, "batch: sample shape mismatch");
      std::copy(s.data(), s.data() + stride, out.data() + k * stride);
    }
    return out;
  }
};

/// Rows of a feature/embedding matrix (one row per sample).
template <typename T>
class MatrixSource : public SampleSource<T> {
 public:
  MatrixSource(Tensor<T> rows, std::vector<std::size_t> labels)
      : rows_(std::move(rows)), labels_(std::move(labels)) {
    require(rows_.rank() == 2 && rows_.dim(0) == labels_.size(),
            "matrix source: rows/labels mismatch");
  }

  std::size_t size() const override { return labels_.size(); }
  std::size_t label(std::size_t i) const override { return labels_[i]; }
  std::vector<std::size_t> sample_shape() const override { return {rows_.dim(1)}; }
  Tensor<T> input(std::size_t i, bool, std::uint64_t) override {
    Tensor<T> out({rows_.dim(1)});
    std::copy(rows_.data() + i * rows_.dim(1), rows_.data() + (i + 1) * rows_.dim(1), out.data());
    return out;
  }

 private:
  Tensor<T> rows_;
  std::vector<std::size_t> labels_;
};

/// In-memory image set (used for toy/overfit runs and tests).
template <typename T>
class ImageMemorySource : public SampleSource<T> {
 public:
  ImageMemorySource(std::vector<Image> images, std::vector<std::size_t> labels, int resolution,
                    std::optional<AugmentationPolicy> train_policy, std::uint64_t seed)
      : images_(std::move(images)), labels_(std::move(labels)), resolution_(resolution),
        policy_(std::move(train_policy)), seed_(seed) {
    require(images_.size() == labels_.size(), "image source: images/labels mismatch");
  }

  std::size_t size() const override { return images_.size(); }
  std::size_t label(std::size_t i) const override { return labels_[i]; }
  std::vector<std::size_t> sample_shape() const override {
    return {3, static_cast<std::size_t>(resolution_), static_cast<std::size_t>(resolution_)};
  }

  Tensor<T> input(std::size_t i, bool train, std::uint64_t epoch) override {
    Image img;
    if (train && policy_) {
      img = apply_policy(*policy_, images_[i], derive_seed(seed_, i, epoch), resolution_).image;
    } else {
      img = (images_[i].height == resolution_ && images_[i].width == resolution_)
                ? images_[i]
                : resize_bilinear(images_[i], resolution_, resolution_);
    }
    return image_to_chw<T>(img, kMean, kStd);
  }

  static constexpr std::array<T, 3> kMean{T(0.5), T(0.5), T(0.5)};
  static constexpr std::array<T, 3> kStd{T(0.5), T(0.5), T(0.5)};

 private:
  std::vector<Image> images_;
  std::vector<std::size_t> labels_;
  int resolution_;
  std::optional<AugmentationPolicy> policy_;
  std::uint64_t seed_;
};

/// Images decoded on demand from the download cache for one split subset.
template <typename T>
class CachedImageSource : public SampleSource<T> {
 public:
  CachedImageSource(const DatasetManifest& manifest, const std::vector<std::uint64_t>& ids,
                    const std::filesystem::path& cache_dir, int resolution,
                    std::optional<AugmentationPolicy> train_policy, std::uint64_t seed)
      : resolution_(resolution), policy_(std::move(train_policy)), seed_(seed) {
    for (std::uint64_t id : ids) {
      const ImageRecord* rec = nullptr;
      for (const auto& r : manifest.records)
        if (r.image_id == id) rec = &r;
      require(rec != nullptr, "image source: id " + std::to_string(id) + " not in manifest");
      paths_.push_back(cached_image_path(*rec, cache_dir).string());
      ids_.push_back(id);
      labels_.push_back(static_cast<std::size_t>(rec->label));
    }
  }

  std::size_t size() const override { return paths_.size(); }
  std::size_t label(std::size_t i) const override { return labels_[i]; }
  std::vector<std::size_t> sample_shape() const override {
    return {3, static_cast<std::size_t>(resolution_), static_cast<std::size_t>(resolution_)};
  }

  Tensor<T> input(std::size_t i, bool train, std::uint64_t epoch) override {
    auto decoded = decode_image_file(paths_[i]);
    require(decoded.has_value(), "image source: cannot decode " + paths_[i]);
    Image img;
    if (train && policy_) {
      img = apply_policy(*policy_, *decoded, derive_seed(seed_, ids_[i], epoch), resolution_).image;
    } else {
      img = resize_bilinear(*decoded, resolution_, resolution_);
    }
    return image_to_chw<T>(img, ImageMemorySource<T>::kMean, ImageMemorySource<T>::kStd);
  }

 private:
  std::vector<std::string> paths_;
  std::vector<std::uint64_t> ids_;
  std::vector<std::size_t> labels_;
  int resolution_;
  std::optional<AugmentationPolicy> policy_;
  std::uint64_t seed_;
};

}  // namespace stillact
