#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "stillact/backbone/handle.hpp"
#include "stillact/core/embfile.hpp"
#include "stillact/core/image.hpp"
#include "stillact/dataset/download.hpp"
#include "stillact/dataset/manifest.hpp"

namespace stillact {

/// Deterministic resize (shorter side, bilinear) + center crop + channel
/// normalization with the constants published with the weights.
inline Tensor<float> preprocess(const Image& img, const BackboneHandle& handle) {
  require(!img.empty(), "preprocess: empty image");
  const int r = static_cast<int>(handle.resolution());
  Image resized;
  if (img.height <= img.width) {
    const int w = std::max(r, static_cast<int>(std::lround(static_cast<double>(img.width) * r /
                                                           img.height)));
    resized = resize_bilinear(img, r, w);
  } else {
    const int h = std::max(r, static_cast<int>(std::lround(static_cast<double>(img.height) * r /
                                                           img.width)));
    resized = resize_bilinear(img, h, r);
  }
  const Image cropped = center_crop(resized, r, r);
  return image_to_chw<float>(cropped, handle.preprocessing.mean, handle.preprocessing.stddev);
}

/// Embeds manifest images (warm cache required), one row per id in the given
/// order. All-or-nothing: any undecodable image fails the whole call with
/// every offending id listed.
inline EmbeddingMatrix embed_images(const BackboneHandle& handle, const DatasetManifest& manifest,
                                    const std::vector<std::uint64_t>& ids,
                                    const std::filesystem::path& cache_dir,
                                    std::size_t batch_size = 8) {
  require(!ids.empty(), "embed_images: no ids");
  std::vector<Tensor<float>> inputs;
  std::string failures;
  for (std::uint64_t id : ids) {
    const ImageRecord* rec = nullptr;
    for (const auto& r : manifest.records)
      if (r.image_id == id) rec = &r;
    require(rec != nullptr, "embed_images: id " + std::to_string(id) + " not in manifest");
    const auto img = decode_image_file(cached_image_path(*rec, cache_dir).string());
    if (!img) {
      failures += (failures.empty() ? "" : ", ") + std::to_string(id);
      continue;
    }
    inputs.push_back(preprocess(*img, handle));
  }
  if (!failures.empty())
    throw Error("embed_images: undecodable cached images for ids: " + failures);

  EmbeddingMatrix out;
  out.rows = static_cast<std::uint32_t>(ids.size());
  out.dim = static_cast<std::uint32_t>(handle.embedding_dim);
  out.source = EmbeddingSource::image;
  out.values.resize(static_cast<std::size_t>(out.rows) * out.dim);
  for (std::uint64_t id : ids) out.row_keys.push_back(std::to_string(id));

  Context ctx{false, nullptr};
  const std::size_t r = handle.resolution();
  for (std::size_t start = 0; start < inputs.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, inputs.size() - start);
    Tensor<float> batch({n, 3, r, r});
    for (std::size_t i = 0; i < n; ++i)
      std::copy(inputs[start + i].data(), inputs[start + i].data() + inputs[start + i].size(),
                batch.data() + i * 3 * r * r);
    const Tensor<float> emb = handle.vision->forward(batch, ctx);
    std::copy(emb.data(), emb.data() + emb.size(), out.values.data() + start * out.dim);
  }
  return out;
}

/// Embeds prompt strings with the text tower; rows follow prompt order.
inline EmbeddingMatrix embed_texts(const BackboneHandle& handle,
                                   const std::vector<std::string>& prompts) {
  require(!prompts.empty(), "embed_texts: no prompts");
  if (!handle.is_vision_language())
    throw Error("embed_texts: unsupported operation for kind " + to_string(handle.kind) +
                " (no text tower)");
  EmbeddingMatrix out;
  out.rows = static_cast<std::uint32_t>(prompts.size());
  out.dim = static_cast<std::uint32_t>(handle.text->output_dim());
  out.source = EmbeddingSource::text;
  out.row_keys = prompts;
  out.values.resize(static_cast<std::size_t>(out.rows) * out.dim);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto emb = handle.text->encode(handle.tokenizer->encode(prompts[i]));
    require(emb.size() == out.dim, "embed_texts: dim mismatch");
    std::copy(emb.data(), emb.data() + emb.size(), out.values.data() + i * out.dim);
  }
  return out;
}

/// Default prompt per class: the bare activity token. walking_running maps
/// to "walking"; the template variant wraps the token in a sentence.
inline std::vector<std::string> prompts_for_classes(const std::vector<std::string>& class_order,
                                                    bool use_template = false) {
  std::vector<std::string> prompts;
  for (const auto& cls : class_order) {
    std::string token = cls == "walking_running" ? "walking" : cls;
    prompts.push_back(use_template ? "a photo of a person " + token : token);
  }
  return prompts;
}

/// N x C cosine scores between image rows and class text rows.
struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t classes = 0;
  std::vector<double> values;  // rows*classes
  std::vector<std::string> class_order;

  double at(std::size_t i, std::size_t c) const { return values[i * classes + c]; }
};

inline SimilarityMatrix similarity_features(const EmbeddingMatrix& images,
                                            const EmbeddingMatrix& texts,
                                            std::vector<std::string> class_order = {}) {
  require(images.dim == texts.dim, "similarity: embedding dims differ (" +
                                       std::to_string(images.dim) + " vs " +
                                       std::to_string(texts.dim) + ")");
  require(texts.rows >= 1, "similarity: no text rows");
  if (class_order.empty()) class_order = texts.row_keys;
  require(class_order.size() == texts.rows, "similarity: class order length mismatch");

  auto norm_of = [](const EmbeddingMatrix& m, std::size_t row) {
    double ss = 0;
    const float* r = m.row(row);
    for (std::size_t i = 0; i < m.dim; ++i) ss += static_cast<double>(r[i]) * r[i];
    return std::sqrt(ss);
  };

  SimilarityMatrix out;
  out.rows = images.rows;
  out.classes = texts.rows;
  out.class_order = std::move(class_order);
  out.values.resize(out.rows * out.classes);
  std::vector<double> tnorm(texts.rows);
  for (std::size_t c = 0; c < texts.rows; ++c) {
    tnorm[c] = norm_of(texts, c);
    require(tnorm[c] > 0, "similarity: zero-norm text row '" + texts.row_keys[c] + "'");
  }
  for (std::size_t i = 0; i < images.rows; ++i) {
    const double inorm = norm_of(images, i);
    require(inorm > 0, "similarity: zero-norm image row '" + images.row_keys[i] + "'");
    for (std::size_t c = 0; c < texts.rows; ++c) {
      double dot = 0;
      for (std::size_t k = 0; k < images.dim; ++k)
        dot += static_cast<double>(images.row(i)[k]) * texts.row(c)[k];
      out.values[i * out.classes + c] = dot / (inorm * tnorm[c]);
    }
  }
  return out;
}

}  // namespace stillact
