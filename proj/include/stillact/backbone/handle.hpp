#pragma once

#include <array>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>

#include <httplib.h>

#include "stillact/backbone/tokenizer.hpp"
#include "stillact/backbone/towers.hpp"
#include "stillact/core/filelock.hpp"
#include "stillact/core/ntc.hpp"

// Backbone weight files are named-tensor containers with a
// "stillact.backbone.v1" meta block describing both towers, the preprocessing
// constants published with the weights, and the tokenizer. The hub client
// resolves a weights id against the local cache first; env vars:
//   STILLACT_OFFLINE=1      never touch the network
//   STILLACT_CACHE_DIR=...  cache root (default ~/.cache/stillact)
//   STILLACT_HUB_URL=...    optional base url serving <id>.ntc files

namespace stillact {

enum class BackboneKind { vit, clip, siglip2 };

inline std::string to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::vit: return "vit";
    case BackboneKind::clip: return "clip";
    case BackboneKind::siglip2: return "siglip2";
  }
  throw Error("backbone: invalid kind enum");
}

inline BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "vit") return BackboneKind::vit;
  if (s == "clip") return BackboneKind::clip;
  if (s == "siglip2") return BackboneKind::siglip2;
  throw Error("backbone: unknown kind '" + s + "' (expected vit|clip|siglip2)");
}

struct PreprocessSpec {
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev{0.5f, 0.5f, 0.5f};
};

struct HubOptions {
  bool offline = false;
  std::string cache_dir;
  std::string hub_url;

  static HubOptions from_env() {
    HubOptions o;
    if (const char* v = std::getenv("STILLACT_OFFLINE")) o.offline = std::string(v) == "1";
    if (const char* v = std::getenv("STILLACT_CACHE_DIR")) o.cache_dir = v;
    if (const char* v = std::getenv("STILLACT_HUB_URL")) o.hub_url = v;
    if (o.cache_dir.empty()) {
      const char* home = std::getenv("HOME");
      o.cache_dir = (home ? std::string(home) : std::string(".")) + "/.cache/stillact";
    }
    return o;
  }
};

struct BackboneHandle {
  BackboneKind kind = BackboneKind::vit;
  std::string weights_id;
  std::size_t embedding_dim = 0;
  std::size_t patch_size = 0;
  PreprocessSpec preprocessing;
  std::shared_ptr<VisionTower<float>> vision;
  std::shared_ptr<TextTower<float>> text;       // null for image-only towers
  std::shared_ptr<Tokenizer> tokenizer;         // null for image-only towers

  bool is_vision_language() const { return text != nullptr; }
  std::size_t resolution() const { return vision->config().resolution; }
};

namespace detail {

inline nlohmann::json vision_config_to_json(const VisionConfig& c) {
  return nlohmann::json{{"width", c.width},       {"layers", c.layers},
                        {"heads", c.heads},       {"patch_size", c.patch_size},
                        {"resolution", c.resolution}, {"mlp_ratio", c.mlp_ratio},
                        {"embedding_dim", c.embedding_dim}, {"activation", c.activation},
                        {"pooling", c.pooling},   {"ln_pre", c.ln_pre},
                        {"projection", c.projection}, {"ln_eps", c.ln_eps}};
}

inline VisionConfig vision_config_from_json(const nlohmann::json& j) {
  VisionConfig c;
  c.width = j.at("width").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.patch_size = j.at("patch_size").get<std::size_t>();
  c.resolution = j.at("resolution").get<std::size_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.activation = j.at("activation").get<std::string>();
  c.pooling = j.at("pooling").get<std::string>();
  c.ln_pre = j.at("ln_pre").get<bool>();
  c.projection = j.at("projection").get<bool>();
  c.ln_eps = j.value("ln_eps", 1e-5);
  return c;
}

inline nlohmann::json text_config_to_json(const TextConfig& c) {
  return nlohmann::json{{"width", c.width},       {"layers", c.layers},
                        {"heads", c.heads},       {"context_length", c.context_length},
                        {"vocab_size", c.vocab_size}, {"mlp_ratio", c.mlp_ratio},
                        {"embedding_dim", c.embedding_dim}, {"activation", c.activation},
                        {"causal", c.causal},     {"pooling", c.pooling},
                        {"projection", c.projection}, {"ln_eps", c.ln_eps}};
}

inline TextConfig text_config_from_json(const nlohmann::json& j) {
  TextConfig c;
  c.width = j.at("width").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.context_length = j.at("context_length").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.activation = j.at("activation").get<std::string>();
  c.causal = j.at("causal").get<bool>();
  c.pooling = j.at("pooling").get<std::string>();
  c.projection = j.at("projection").get<bool>();
  c.ln_eps = j.value("ln_eps", 1e-5);
  return c;
}

inline std::string sanitize_weights_id(const std::string& id) {
  std::string out;
  for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-')
                               ? c
                               : '_';
  return out;
}

}  // namespace detail

/// Serializes a loaded backbone (used by the exporter path and by tests that
/// fabricate small random towers).
inline void save_backbone(const std::string& path, BackboneKind kind,
                          const std::string& weights_id, VisionTower<float>& vision,
                          TextTower<float>* text, const Tokenizer* tokenizer,
                          const PreprocessSpec& pre) {
  NtcFile file;
  file.meta["schema"] = "stillact.backbone.v1";
  file.meta["kind"] = to_string(kind);
  file.meta["weights_id"] = weights_id;
  file.meta["embedding_dim"] = vision.output_dim();
  file.meta["vision"] = detail::vision_config_to_json(vision.config());
  file.meta["preprocess"] = {{"mean", pre.mean}, {"std", pre.stddev}};
  std::vector<ParamRef<float>> params;
  vision.collect_params("vision.", params);
  if (text) {
    file.meta["text"] = detail::text_config_to_json(text->config());
    text->collect_params("text.", params);
    require(tokenizer != nullptr, "save_backbone: text tower requires a tokenizer");
    file.meta["tokenizer"] = tokenizer->to_json();
  }
  for (auto& p : params) file.tensors.emplace_back(p.name, NtcEntry::of(*p.value));
  write_ntc(path, file);
}

/// Resolves a weights id to a local file, fetching through the hub when
/// allowed. Concurrent fetches of the same id serialize on a lock file.
inline std::string resolve_backbone_weights(const std::string& weights_source,
                                            const HubOptions& opts = HubOptions::from_env()) {
  namespace fs = std::filesystem;
  if (fs::exists(weights_source)) return weights_source;

  const fs::path cache = fs::path(opts.cache_dir) / "backbones" /
                         (detail::sanitize_weights_id(weights_source) + ".ntc");
  if (fs::exists(cache)) return cache.string();
  if (opts.offline)
    throw Error("backbone: offline mode and weights '" + weights_source +
                "' not cached at " + cache.string());
  if (opts.hub_url.empty())
    throw Error("backbone: weights '" + weights_source + "' not cached at " + cache.string() +
                " and no hub url configured; export them with tools/export_backbone.py or set "
                "STILLACT_HUB_URL");

  fs::create_directories(cache.parent_path());
  FileLock lock(cache.string() + ".lock");
  if (fs::exists(cache)) return cache.string();  // another process fetched it

  const auto scheme_end = opts.hub_url.find("://");
  require(scheme_end != std::string::npos, "backbone: malformed hub url " + opts.hub_url);
  const auto path_start = opts.hub_url.find('/', scheme_end + 3);
  const std::string host =
      path_start == std::string::npos ? opts.hub_url : opts.hub_url.substr(0, path_start);
  const std::string base = path_start == std::string::npos ? "" : opts.hub_url.substr(path_start);
  httplib::Client client(host);
  client.set_follow_location(true);
  client.set_read_timeout(300);
  auto res = client.Get(base + "/" + detail::sanitize_weights_id(weights_source) + ".ntc");
  require(res && res->status == 200,
          "backbone: hub fetch failed for '" + weights_source + "' from " + opts.hub_url);
  const std::string tmp = cache.string() + ".part";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(res->body.data(), static_cast<std::streamsize>(res->body.size()));
    require(out.good(), "backbone: cannot write " + tmp);
  }
  fs::rename(tmp, cache);
  return cache.string();
}

/// Loads a backbone of the requested kind. The checksum of the container is
/// verified before any tensor is touched; a mismatch produces no handle.
inline BackboneHandle load_backbone(BackboneKind kind, const std::string& weights_source,
                                    const HubOptions& opts = HubOptions::from_env()) {
  const std::string path = resolve_backbone_weights(weights_source, opts);
  const NtcFile file = read_ntc(path);
  require(file.meta.value("schema", "") == "stillact.backbone.v1",
          "backbone: " + path + " is not a backbone container");
  const std::string stored_kind = file.meta.at("kind").get<std::string>();
  require(stored_kind == to_string(kind),
          "backbone: requested kind " + to_string(kind) + " but " + path + " holds " + stored_kind);

  BackboneHandle handle;
  handle.kind = kind;
  handle.weights_id = file.meta.at("weights_id").get<std::string>();
  const VisionConfig vc = detail::vision_config_from_json(file.meta.at("vision"));
  handle.vision = std::make_shared<VisionTower<float>>(vc);
  handle.patch_size = vc.patch_size;
  const auto pre = file.meta.at("preprocess");
  for (int c = 0; c < 3; ++c) {
    handle.preprocessing.mean[c] = pre.at("mean").at(c).get<float>();
    handle.preprocessing.stddev[c] = pre.at("std").at(c).get<float>();
  }

  std::vector<ParamRef<float>> params;
  handle.vision->collect_params("vision.", params);
  if (file.meta.contains("text")) {
    handle.text = std::make_shared<TextTower<float>>(
        detail::text_config_from_json(file.meta.at("text")));
    handle.text->collect_params("text.", params);
    handle.tokenizer = std::make_shared<Tokenizer>(Tokenizer::from_json(file.meta.at("tokenizer")));
  }
  for (auto& p : params) {
    const auto& entry = file.find(p.name);
    require(entry.shape == p.value->shape(), "backbone: shape mismatch for " + p.name);
    *p.value = entry.as<float>();
  }
  handle.embedding_dim = handle.vision->output_dim();
  require(handle.embedding_dim == file.meta.at("embedding_dim").get<std::size_t>(),
          "backbone: embedding_dim metadata disagrees with the vision tower");
  return handle;
}

}  // namespace stillact
