#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/core/ntc.hpp"
#include "stillact/core/rng.hpp"
#include "stillact/nn/layers.hpp"

namespace stillact {

enum class ModelFamily { fnn_base, cnn_base, cnn_gen, embedding_mlp, feature_mlp };

inline std::string to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::fnn_base: return "fnn_base";
    case ModelFamily::cnn_base: return "cnn_base";
    case ModelFamily::cnn_gen: return "cnn_gen";
    case ModelFamily::embedding_mlp: return "embedding_mlp";
    case ModelFamily::feature_mlp: return "feature_mlp";
  }
  throw Error("model: invalid family enum");
}

inline ModelFamily model_family_from_string(const std::string& s) {
  if (s == "fnn_base") return ModelFamily::fnn_base;
  if (s == "cnn_base") return ModelFamily::cnn_base;
  if (s == "cnn_gen") return ModelFamily::cnn_gen;
  if (s == "embedding_mlp") return ModelFamily::embedding_mlp;
  if (s == "feature_mlp") return ModelFamily::feature_mlp;
  throw Error("model: unknown family '" + s + "'");
}

struct ModelConfig {
  ModelFamily family = ModelFamily::cnn_base;
  std::vector<std::size_t> input_shape;        // (3,H,W) for images, (d) for vectors
  std::size_t num_classes = 3;
  std::vector<std::size_t> conv_channels{32, 64, 128};
  std::size_t fc_hidden = 256;                 // CNN classifier hidden width
  std::vector<std::size_t> hidden{512, 128};   // FNN / MLP hidden widths
  double dropout_conv = 0.25;
  double dropout_fc = 0.5;
  bool batch_norm = false;
  std::uint64_t init_seed = 0;
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"family", to_string(c.family)},
                        {"input_shape", c.input_shape},
                        {"num_classes", c.num_classes},
                        {"conv_channels", c.conv_channels},
                        {"fc_hidden", c.fc_hidden},
                        {"hidden", c.hidden},
                        {"dropout_conv", c.dropout_conv},
                        {"dropout_fc", c.dropout_fc},
                        {"batch_norm", c.batch_norm},
                        {"init_seed", c.init_seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.family = model_family_from_string(j.at("family").get<std::string>());
  c.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
  c.fc_hidden = j.at("fc_hidden").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.dropout_conv = j.at("dropout_conv").get<double>();
  c.dropout_fc = j.at("dropout_fc").get<double>();
  c.batch_norm = j.at("batch_norm").get<bool>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

/// A scratch model: its configuration plus the layer pipeline.
template <typename T>
struct Model {
  ModelConfig config;
  Sequential<T> net;
  std::vector<std::string> notes;

  Tensor<T> forward(const Tensor<T>& x, Context& ctx) { return net.forward(x, ctx); }
  Tensor<T> backward(const Tensor<T>& dy) { return net.backward(dy); }
  std::vector<ParamRef<T>> parameters() { return parameters_of<T>(net); }
};

/// He-uniform on conv/linear weights, seeded; biases and norm affines keep
/// their constructor values (zero / identity).
template <typename T>
void init_he_uniform(Layer<T>& net, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "he_uniform_init"));
  for (auto& p : parameters_of<T>(net)) {
    const auto& shape = p.value->shape();
    const bool is_weight = p.name.size() >= 6 && p.name.rfind("weight") == p.name.size() - 6;
    if (!is_weight || shape.size() < 2) continue;
    std::size_t fan_in = shape[1];
    for (std::size_t i = 2; i < shape.size(); ++i) fan_in *= shape[i];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < p.value->size(); ++i)
      (*p.value)[i] = static_cast<T>(rng.uniform(-limit, limit));
  }
}

/// flatten -> (linear -> relu)* -> linear(C)
template <typename T>
Model<T> build_fnn(const ModelConfig& config) {
  require(config.num_classes >= 2, "fnn: num_classes must be >= 2");
  std::size_t in = 1;
  for (auto d : config.input_shape) in *= d;
  require(in > 0, "fnn: input shape flattens to zero");

  Model<T> m;
  m.config = config;
  m.config.family = ModelFamily::fnn_base;
  m.net.template add<Flatten<T>>("flatten");
  std::size_t cur = in;
  if (config.hidden.empty()) m.notes.push_back("no hidden layers: single linear map");
  for (std::size_t i = 0; i < config.hidden.size(); ++i) {
    require(config.hidden[i] > 0, "fnn: hidden widths must be positive");
    m.net.template add<Linear<T>>("fc" + std::to_string(i + 1), cur, config.hidden[i]);
    m.net.template add<ReLU<T>>("relu" + std::to_string(i + 1));
    cur = config.hidden[i];
  }
  m.net.template add<Linear<T>>("head", cur, config.num_classes);
  init_he_uniform<T>(m.net, config.init_seed);
  return m;
}

/// Three conv blocks (3x3, pad 1, ReLU, 2x2 max-pool) into a two-layer
/// classifier. The generalised variant adds batch norm after each conv,
/// dropout after each pool, and dropout between the linear layers; every
/// weight-bearing shape matches the base variant.
template <typename T>
Model<T> build_cnn(const ModelConfig& config, bool generalised) {
  require(config.num_classes >= 2, "cnn: num_classes must be >= 2");
  require(config.input_shape.size() == 3, "cnn: input shape must be (channels, height, width)");
  require(config.conv_channels.size() == 3, "cnn: exactly three conv blocks expected");
  const std::size_t channels = config.input_shape[0];
  const std::size_t h = config.input_shape[1], w = config.input_shape[2];
  require(h % 8 == 0 && w % 8 == 0,
          "cnn: spatial dims must be divisible by 8 (three 2x2 poolings), got " +
              std::to_string(h) + "x" + std::to_string(w));

  Model<T> m;
  m.config = config;
  m.config.family = generalised ? ModelFamily::cnn_gen : ModelFamily::cnn_base;
  m.config.batch_norm = generalised;
  std::size_t cin = channels;
  for (int blk = 0; blk < 3; ++blk) {
    const std::size_t cout = config.conv_channels[blk];
    const std::string n = std::to_string(blk + 1);
    m.net.template add<Conv2d<T>>("conv" + n, cin, cout, 3, 1, 1);
    if (generalised) m.net.template add<BatchNorm<T>>("bn" + n, cout);
    m.net.template add<ReLU<T>>("relu" + n);
    m.net.template add<MaxPool2d<T>>("pool" + n, 2, 2);
    if (generalised) m.net.template add<Dropout<T>>("drop" + n, config.dropout_conv);
    cin = cout;
  }
  const std::size_t flat = cin * (h / 8) * (w / 8);
  m.net.template add<Flatten<T>>("flatten");
  m.net.template add<Linear<T>>("fc1", flat, config.fc_hidden);
  m.net.template add<ReLU<T>>("relu_fc");
  if (generalised) m.net.template add<Dropout<T>>("drop_fc", config.dropout_fc);
  m.net.template add<Linear<T>>("head", config.fc_hidden, config.num_classes);
  init_he_uniform<T>(m.net, config.init_seed);
  return m;
}

/// MLP over frozen image embeddings (linear -> batch norm -> ReLU -> dropout
/// per hidden layer). Batch norm sites follow config.batch_norm.
template <typename T>
Model<T> build_embedding_mlp(const ModelConfig& config) {
  require(config.input_shape.size() == 1 && config.input_shape[0] >= 1,
          "embedding_mlp: input shape must be (d) with d >= 1");
  require(config.num_classes >= 2, "embedding_mlp: num_classes must be >= 2");
  Model<T> m;
  m.config = config;
  m.config.family = ModelFamily::embedding_mlp;
  std::size_t cur = config.input_shape[0];
  for (std::size_t i = 0; i < config.hidden.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    m.net.template add<Linear<T>>("fc" + n, cur, config.hidden[i]);
    if (config.batch_norm) m.net.template add<BatchNorm<T>>("bn" + n, config.hidden[i]);
    m.net.template add<ReLU<T>>("relu" + n);
    if (config.dropout_fc > 0) m.net.template add<Dropout<T>>("drop" + n, config.dropout_fc);
    cur = config.hidden[i];
  }
  m.net.template add<Linear<T>>("head", cur, config.num_classes);
  init_he_uniform<T>(m.net, config.init_seed);
  return m;
}

/// MLP over cosine-similarity features; input dimension is exactly C.
template <typename T>
Model<T> build_feature_mlp(const ModelConfig& config) {
  require(config.num_classes >= 2, "feature_mlp: num_classes must be >= 2");
  Model<T> m;
  m.config = config;
  m.config.family = ModelFamily::feature_mlp;
  m.config.input_shape = {config.num_classes};
  std::size_t cur = config.num_classes;
  for (std::size_t i = 0; i < config.hidden.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    m.net.template add<Linear<T>>("fc" + n, cur, config.hidden[i]);
    m.net.template add<ReLU<T>>("relu" + n);
    cur = config.hidden[i];
  }
  m.net.template add<Linear<T>>("head", cur, config.num_classes);
  init_he_uniform<T>(m.net, config.init_seed);
  return m;
}

/// Cosine scores live in [-1, 1]; anything outside is not a similarity row.
template <typename T>
void validate_cosine_features(const Tensor<T>& rows) {
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (!(std::abs(static_cast<double>(rows[i])) <= 1.0 + 1e-6))
      throw Error("feature_mlp: input value " + std::to_string(static_cast<double>(rows[i])) +
                  " outside [-1,1], not a cosine feature");
}

template <typename T>
Model<T> build_model(const ModelConfig& config) {
  switch (config.family) {
    case ModelFamily::fnn_base: return build_fnn<T>(config);
    case ModelFamily::cnn_base: return build_cnn<T>(config, false);
    case ModelFamily::cnn_gen: return build_cnn<T>(config, true);
    case ModelFamily::embedding_mlp: return build_embedding_mlp<T>(config);
    case ModelFamily::feature_mlp: return build_feature_mlp<T>(config);
  }
  throw Error("model: invalid family enum");
}

// ---- checkpoints ---------------------------------------------------------

/// Writes <stem>.ntc (named parameters, meta = sidecar) and <stem>.json
/// (the sidecar alone, canonical single-line dump).
template <typename T>
void save_checkpoint(Layer<T>& net, const nlohmann::json& sidecar, const std::string& stem) {
  NtcFile file;
  file.meta = sidecar;
  for (auto& p : parameters_of<T>(net)) file.tensors.emplace_back(p.name, NtcEntry::of(*p.value));
  for (auto& b : buffers_of<T>(net))
    file.tensors.emplace_back("buffer." + b.name, NtcEntry::of(*b.value));
  write_ntc(stem + ".ntc", file);
  std::ofstream side(stem + ".json", std::ios::trunc);
  require(side.good(), "checkpoint: cannot write sidecar " + stem + ".json");
  side << sidecar.dump() << "\n";
}

/// Restores parameters and buffers by name; shapes must match exactly.
/// Returns the sidecar.
template <typename T>
nlohmann::json load_checkpoint(Layer<T>& net, const std::string& stem) {
  const NtcFile file = read_ntc(stem + ".ntc");
  for (auto& p : parameters_of<T>(net)) {
    const auto& entry = file.find(p.name);
    require(entry.shape == p.value->shape(),
            "checkpoint: shape mismatch for " + p.name);
    *p.value = entry.template as<T>();
  }
  for (auto& b : buffers_of<T>(net)) {
    const auto& entry = file.find("buffer." + b.name);
    require(entry.shape == b.value->shape(), "checkpoint: shape mismatch for buffer " + b.name);
    *b.value = entry.template as<T>();
  }
  return file.meta;
}

}  // namespace stillact
