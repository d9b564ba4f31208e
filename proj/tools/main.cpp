// stillact: experiment harness for three-way still-image activity
// classification. Subcommands cover the full pipeline: dataset build/eda,
// deterministic splits, augmentation sweeps, training with seeded repeats,
// embedding extraction, evaluation, leaderboard with significance tests,
// saliency maps, and misclassification reports.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stillact/augment/policy.hpp"
#include "stillact/backbone/embed.hpp"
#include "stillact/backbone/finetune.hpp"
#include "stillact/backbone/handle.hpp"
#include "stillact/dataset/download.hpp"
#include "stillact/dataset/eda.hpp"
#include "stillact/dataset/manifest.hpp"
#include "stillact/dataset/split.hpp"
#include "stillact/explain/legrad.hpp"
#include "stillact/nn/model.hpp"
#include "stillact/report/plots.hpp"
#include "stillact/stats/leaderboard.hpp"
#include "stillact/stats/tests.hpp"
#include "stillact/train/data.hpp"
#include "stillact/train/harness.hpp"
#include "stillact/train/repeat.hpp"
#include "stillact/train/rundir.hpp"
#include "stillact/train/sweep.hpp"
#include "stillact/version.hpp"

namespace fs = std::filesystem;
using namespace stillact;

namespace {

constexpr const char* kAllFamilies[] = {"clip_ic", "siglip2", "vit",     "cnn_gen",
                                        "cnn_base", "clip_cs", "clip_em", "fnn_base"};

struct AppConfig {
  std::string annotations = "data/coco_activity_subset.jsonl";
  std::string manifest;            // defaults to <run_dir>/<experiment>/manifest.jsonl
  std::string cache_dir = "cache/images";
  std::string run_dir = "runs";
  std::string experiment = "default";
  std::string task = "multiclass";  // multiclass | binary (sitting vs standing)
  std::uint64_t split_seed = 42;
  std::vector<double> ratios{0.8, 0.1, 0.1};
  int resolution = 224;             // scratch-model input resolution
  std::size_t repeats = 5;
  std::uint64_t base_seed = 42;
  std::map<std::string, std::string> backbones = {
      {"clip", "clip-vit-base-patch16"},
      {"vit", "vit-base-patch16-224"},
      {"siglip2", "siglip2-base-patch16-224"}};
  nlohmann::json train_overrides = nlohmann::json::object();

  nlohmann::json to_json() const {
    return nlohmann::json{{"annotations", annotations}, {"manifest", manifest},
                          {"cache_dir", cache_dir},     {"run_dir", run_dir},
                          {"experiment", experiment},   {"task", task},
                          {"split_seed", split_seed},   {"ratios", ratios},
                          {"resolution", resolution},   {"repeats", repeats},
                          {"base_seed", base_seed},     {"backbones", backbones},
                          {"train", train_overrides}};
  }

  void load_file(const std::string& path) {
    const nlohmann::json j = read_json_artifact(path);
    annotations = j.value("annotations", annotations);
    manifest = j.value("manifest", manifest);
    cache_dir = j.value("cache_dir", cache_dir);
    run_dir = j.value("run_dir", run_dir);
    experiment = j.value("experiment", experiment);
    task = j.value("task", task);
    split_seed = j.value("split_seed", split_seed);
    if (j.contains("ratios")) ratios = j.at("ratios").get<std::vector<double>>();
    resolution = j.value("resolution", resolution);
    repeats = j.value("repeats", repeats);
    base_seed = j.value("base_seed", base_seed);
    if (j.contains("backbones"))
      for (const auto& [k, v] : j.at("backbones").items()) backbones[k] = v.get<std::string>();
    if (j.contains("train")) train_overrides = j.at("train");
  }

  void apply_env() {
    if (const char* v = std::getenv("STILLACT_RUN_DIR")) run_dir = v;
    if (const char* v = std::getenv("STILLACT_IMAGE_CACHE")) cache_dir = v;
  }

  fs::path experiment_dir() const { return fs::path(run_dir) / experiment; }
  std::string manifest_path() const {
    return manifest.empty() ? (experiment_dir() / "manifest.jsonl").string() : manifest;
  }
  std::string splits_path() const { return (experiment_dir() / "splits.json").string(); }
  Provenance provenance() const { return {config_hash(to_json()), base_seed}; }
};

std::vector<std::string> task_class_order(const std::string& task) {
  if (task == "binary") return {"sitting", "standing"};
  return canonical_class_order();
}

DatasetManifest task_manifest(const DatasetManifest& full, const std::string& task) {
  if (task != "binary") return full;
  std::vector<ImageRecord> recs;
  for (const auto& r : full.records)
    if (r.label == Label::sitting || r.label == Label::standing) recs.push_back(r);
  return build_manifest(std::move(recs));
}

std::size_t class_index(const std::vector<std::string>& order, Label l) {
  const std::string name = to_string(l);
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] == name) return i;
  throw Error("label " + name + " not in class order for this task");
}

DatasetManifest load_task_manifest(const AppConfig& cfg) {
  return task_manifest(read_manifest_jsonl(cfg.manifest_path()), cfg.task);
}

SplitAssignment load_splits(const AppConfig& cfg) {
  if (!fs::exists(cfg.splits_path()))
    throw Error("missing artifact: " + cfg.splits_path() + " (run 'stillact split' first)");
  return read_splits_json(cfg.splits_path());
}

TrainConfig family_train_config(const AppConfig& cfg, const std::string& family) {
  TrainConfig tc;
  tc.seed = cfg.base_seed;
  const bool finetune = family == "clip_ic" || family == "vit" || family == "siglip2";
  tc.lr = finetune ? 1e-5 : 1e-3;
  nlohmann::json j = train_config_to_json(tc);
  if (cfg.train_overrides.contains("default")) j.update(cfg.train_overrides.at("default"), true);
  if (cfg.train_overrides.contains(family)) j.update(cfg.train_overrides.at(family), true);
  return train_config_from_json(j);
}

ModelConfig scratch_model_config(const AppConfig& cfg, const std::string& family,
                                 std::size_t classes) {
  ModelConfig mc;
  mc.family = model_family_from_string(family);
  mc.num_classes = classes;
  if (family == "fnn_base") {
    mc.input_shape = {3, static_cast<std::size_t>(cfg.resolution),
                      static_cast<std::size_t>(cfg.resolution)};
    mc.hidden = {512, 128};
  } else {
    mc.input_shape = {3, static_cast<std::size_t>(cfg.resolution),
                      static_cast<std::size_t>(cfg.resolution)};
  }
  return mc;
}

std::string embeddings_path(const AppConfig& cfg, const std::string& what) {
  return (cfg.experiment_dir() / "embeddings" / (what + ".emb")).string();
}

EmbeddingMatrix require_embeddings(const AppConfig& cfg, const std::string& what,
                                   const std::string& hint) {
  const std::string path = embeddings_path(cfg, what);
  if (!fs::exists(path)) throw Error("missing artifact: " + path + " (run '" + hint + "' first)");
  return read_embedding_file(path);
}

Tensor<float> embedding_rows_for_ids(const EmbeddingMatrix& emb,
                                     const std::vector<std::uint64_t>& ids) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < emb.rows; ++i) index[emb.row_keys[i]] = i;
  Tensor<float> rows({ids.size(), emb.dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = index.find(std::to_string(ids[i]));
    if (it == index.end())
      throw Error("embedding file lacks image_id " + std::to_string(ids[i]) +
                  " (regenerate with 'stillact embed --images')");
    std::copy(emb.row(it->second), emb.row(it->second) + emb.dim, rows.data() + i * emb.dim);
  }
  return rows;
}

/// Image source that feeds a backbone: train mode applies the policy at the
/// tower resolution, eval mode uses the published preprocessing.
class BackboneImageSource : public SampleSource<float> {
 public:
  BackboneImageSource(const DatasetManifest& manifest, const std::vector<std::uint64_t>& ids,
                      const fs::path& cache_dir, const BackboneHandle& handle,
                      const std::vector<std::string>& class_order,
                      std::optional<AugmentationPolicy> policy, std::uint64_t seed)
      : handle_(handle), policy_(std::move(policy)), seed_(seed) {
    for (std::uint64_t id : ids) {
      const ImageRecord* rec = nullptr;
      for (const auto& r : manifest.records)
        if (r.image_id == id) rec = &r;
      require(rec != nullptr, "id " + std::to_string(id) + " not in manifest");
      paths_.push_back(cached_image_path(*rec, cache_dir).string());
      ids_.push_back(id);
      labels_.push_back(class_index(class_order, rec->label));
    }
  }

  std::size_t size() const override { return paths_.size(); }
  std::size_t label(std::size_t i) const override { return labels_[i]; }
  std::vector<std::size_t> sample_shape() const override {
    const std::size_t r = handle_.resolution();
    return {3, r, r};
  }
  Tensor<float> input(std::size_t i, bool train, std::uint64_t epoch) override {
    auto img = decode_image_file(paths_[i]);
    require(img.has_value(), "cannot decode " + paths_[i]);
    if (train && policy_) {
      const auto aug = apply_policy(*policy_, *img, derive_seed(seed_, ids_[i], epoch),
                                    static_cast<int>(handle_.resolution()));
      return image_to_chw<float>(aug.image, handle_.preprocessing.mean,
                                 handle_.preprocessing.stddev);
    }
    return preprocess(*img, handle_);
  }

 private:
  std::vector<std::string> paths_;
  std::vector<std::uint64_t> ids_;
  std::vector<std::size_t> labels_;
  const BackboneHandle& handle_;
  std::optional<AugmentationPolicy> policy_;
  std::uint64_t seed_;
};

BackboneKind family_backbone_kind(const std::string& family) {
  if (family == "clip_ic" || family == "clip_em" || family == "clip_cs") return BackboneKind::clip;
  if (family == "vit") return BackboneKind::vit;
  if (family == "siglip2") return BackboneKind::siglip2;
  throw Error("family " + family + " has no backbone");
}

nlohmann::json predictions_json(const std::vector<Prediction>& preds,
                                const std::vector<std::uint64_t>& ids,
                                const std::vector<std::string>& order) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : preds)
    out.push_back({{"image_id", ids[p.sample]},
                   {"true", order[p.label]},
                   {"predicted", order[p.predicted]},
                   {"confidence", p.confidence}});
  return out;
}

// ---- per-family training ---------------------------------------------------

struct FamilyRun {
  TrainLog log;
  MetricReport test_metrics;
  std::vector<Prediction> test_predictions;
};

template <typename Net>
FamilyRun run_training(Net& net, SampleSource<float>& train_src, SampleSource<float>& val_src,
                       SampleSource<float>& test_src, const TrainConfig& tc,
                       const std::vector<std::string>& order) {
  FamilyRun out;
  out.log = train(net, train_src, val_src, tc, order);
  auto eval = evaluate(net, test_src, order, tc.batch_size);
  out.test_metrics = eval.metrics;
  out.test_predictions = std::move(eval.predictions);
  return out;
}

/// Trains one repeat of one family and persists its artifacts. Returns the
/// test metrics, or nothing when training aborted.
std::optional<MetricReport> run_family_repeat(const AppConfig& cfg, const std::string& family,
                                              std::size_t repeat, std::uint64_t seed,
                                              const DatasetManifest& manifest,
                                              const SplitAssignment& splits) {
  const auto order = task_class_order(cfg.task);
  const auto train_ids = split_ids(splits, manifest, Split::train);
  const auto val_ids = split_ids(splits, manifest, Split::val);
  const auto test_ids = split_ids(splits, manifest, Split::test);
  TrainConfig tc = family_train_config(cfg, family);
  tc.seed = seed;

  RunPaths paths{cfg.experiment_dir()};
  const fs::path rdir = paths.repeat_dir(family, repeat);
  fs::create_directories(rdir);
  const Provenance prov{config_hash(cfg.to_json()), seed};

  FamilyRun result;
  nlohmann::json model_desc;

  auto labels_for = [&](const std::vector<std::uint64_t>& ids) {
    std::vector<std::size_t> labels;
    for (auto id : ids)
      for (const auto& r : manifest.records)
        if (r.image_id == id) labels.push_back(class_index(order, r.label));
    return labels;
  };

  if (family == "cnn_base" || family == "cnn_gen" || family == "fnn_base") {
    ModelConfig mc = scratch_model_config(cfg, family, order.size());
    mc.init_seed = seed;
    auto model = build_model<float>(mc);
    model_desc = model_config_to_json(model.config);
    std::optional<AugmentationPolicy> policy = make_policy(tc.augmentation);
    CachedImageSource<float> train_src(manifest, train_ids, cfg.cache_dir, cfg.resolution, policy,
                                       seed);
    CachedImageSource<float> val_src(manifest, val_ids, cfg.cache_dir, cfg.resolution,
                                     std::nullopt, seed);
    CachedImageSource<float> test_src(manifest, test_ids, cfg.cache_dir, cfg.resolution,
                                      std::nullopt, seed);
    result = run_training(model.net, train_src, val_src, test_src, tc, order);
    save_checkpoint(model.net,
                    prov.stamp({{"family", family}, {"config", model_desc}, {"epoch", result.log.best_epoch}}),
                    (rdir / "checkpoint").string());
  } else if (family == "clip_em") {
    const auto emb = require_embeddings(cfg, "clip_images", "stillact embed --images");
    ModelConfig mc;
    mc.family = ModelFamily::embedding_mlp;
    mc.input_shape = {emb.dim};
    mc.hidden = {256, 64};
    mc.batch_norm = true;
    mc.num_classes = order.size();
    mc.init_seed = seed;
    auto model = build_embedding_mlp<float>(mc);
    model_desc = model_config_to_json(model.config);
    MatrixSource<float> train_src(embedding_rows_for_ids(emb, train_ids), labels_for(train_ids));
    MatrixSource<float> val_src(embedding_rows_for_ids(emb, val_ids), labels_for(val_ids));
    MatrixSource<float> test_src(embedding_rows_for_ids(emb, test_ids), labels_for(test_ids));
    result = run_training(model.net, train_src, val_src, test_src, tc, order);
    save_checkpoint(model.net,
                    prov.stamp({{"family", family}, {"config", model_desc}, {"epoch", result.log.best_epoch}}),
                    (rdir / "checkpoint").string());
  } else if (family == "clip_cs") {
    const auto imgs = require_embeddings(cfg, "clip_images", "stillact embed --images");
    const auto txts = require_embeddings(cfg, "clip_texts", "stillact embed --texts");
    const auto sim = similarity_features(imgs, txts, order);
    Tensor<float> all({sim.rows, sim.classes});
    for (std::size_t i = 0; i < sim.values.size(); ++i) all[i] = static_cast<float>(sim.values[i]);
    validate_cosine_features(all);
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < imgs.rows; ++i) row_of[imgs.row_keys[i]] = i;
    auto rows_for = [&](const std::vector<std::uint64_t>& ids) {
      Tensor<float> rows({ids.size(), sim.classes});
      for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = row_of.find(std::to_string(ids[i]));
        require(it != row_of.end(), "similarity rows lack id " + std::to_string(ids[i]));
        for (std::size_t c = 0; c < sim.classes; ++c)
          rows.at(i, c) = static_cast<float>(sim.at(it->second, c));
      }
      return rows;
    };
    ModelConfig mc;
    mc.family = ModelFamily::feature_mlp;
    mc.num_classes = order.size();
    mc.hidden = {16};
    mc.init_seed = seed;
    auto model = build_feature_mlp<float>(mc);
    model_desc = model_config_to_json(model.config);
    MatrixSource<float> train_src(rows_for(train_ids), labels_for(train_ids));
    MatrixSource<float> val_src(rows_for(val_ids), labels_for(val_ids));
    MatrixSource<float> test_src(rows_for(test_ids), labels_for(test_ids));
    result = run_training(model.net, train_src, val_src, test_src, tc, order);
    save_checkpoint(model.net,
                    prov.stamp({{"family", family}, {"config", model_desc}, {"epoch", result.log.best_epoch}}),
                    (rdir / "checkpoint").string());
  } else if (family == "clip_ic" || family == "vit" || family == "siglip2") {
    const BackboneKind kind = family_backbone_kind(family);
    auto handle = load_backbone(kind, cfg.backbones.at(to_string(kind)));
    auto model = attach_head(handle, order.size(), seed);
    model_desc = {{"backbone", handle.weights_id},
                  {"kind", to_string(kind)},
                  {"classes", order.size()}};
    std::optional<AugmentationPolicy> policy = make_policy(tc.augmentation);
    BackboneImageSource train_src(manifest, train_ids, cfg.cache_dir, handle, order, policy, seed);
    BackboneImageSource val_src(manifest, val_ids, cfg.cache_dir, handle, order, std::nullopt,
                                seed);
    BackboneImageSource test_src(manifest, test_ids, cfg.cache_dir, handle, order, std::nullopt,
                                 seed);
    result = run_training(model, train_src, val_src, test_src, tc, order);
    save_checkpoint(static_cast<Layer<float>&>(model),
                    prov.stamp({{"family", family}, {"config", model_desc}, {"epoch", result.log.best_epoch}}),
                    (rdir / "checkpoint").string());
  } else {
    throw Error("unknown family '" + family + "'");
  }

  write_json_artifact(prov.stamp({{"family", family},
                                  {"repeat", repeat},
                                  {"train", train_config_to_json(tc)},
                                  {"model", model_desc}}),
                      rdir / "config.json");
  write_json_artifact(prov.stamp(trainlog_to_json(result.log)), rdir / "trainlog.json");
  write_json_artifact(
      prov.stamp({{"metrics",
                   {{"accuracy", result.test_metrics.accuracy},
                    {"precision_macro", result.test_metrics.precision_macro},
                    {"recall_macro", result.test_metrics.recall_macro},
                    {"f1_macro", result.test_metrics.f1_macro}}},
                  {"family", family},
                  {"repeat", repeat}}),
      rdir / "metrics.json");
  write_json_artifact(prov.stamp({{"family", family},
                                  {"predictions", predictions_json(
                                                      result.test_predictions,
                                                      split_ids(splits, manifest, Split::test),
                                                      order)}}),
                      rdir / "predictions.json");
  if (result.log.aborted) {
    std::cerr << "  repeat " << repeat << " aborted: " << result.log.abort_reason << "\n";
    return std::nullopt;
  }
  return result.test_metrics;
}

// ---- commands ---------------------------------------------------------------

int cmd_dataset_build(const AppConfig& cfg, bool do_download, bool offline, int parallelism) {
  auto manifest = build_manifest(read_annotation_jsonl(cfg.annotations));
  fs::create_directories(cfg.experiment_dir());
  write_manifest_jsonl(manifest, cfg.manifest_path());
  std::cout << "manifest: " << manifest.size() << " records -> " << cfg.manifest_path() << "\n";
  for (Label l : kAllLabels) std::cout << "  " << to_string(l) << ": " << manifest.count(l) << "\n";
  if (do_download) {
    DownloadOptions opts;
    opts.offline = offline;
    opts.parallelism = parallelism;
    auto report = download_images(manifest, cfg.cache_dir, opts);
    write_json_artifact(cfg.provenance().stamp(integrity_to_json(report)),
                        cfg.experiment_dir() / "integrity.json");
    std::cout << "images: " << report.cached << " cached, " << report.downloaded
              << " downloaded, " << report.failed << " failed\n";
    if (!report.all_ok()) {
      for (const auto& img : report.images)
        if (img.status == FetchStatus::failed)
          std::cerr << "  failed " << img.image_id << ": " << img.detail << "\n";
      return 1;
    }
  }
  return 0;
}

int cmd_dataset_eda(const AppConfig& cfg) {
  const auto manifest = read_manifest_jsonl(cfg.manifest_path());
  const auto eda = compute_eda(manifest);
  const fs::path out_dir = cfg.experiment_dir() / "eda";
  write_json_artifact(cfg.provenance().stamp(eda_to_json(eda)), out_dir / "eda.json");
  render_eda_figures(manifest, eda, out_dir, cfg.provenance());
  auto print_row = [](const std::string& name, const DimensionStats& s) {
    std::printf("%-16s %4zu %6.1f%%  w %6.1f +- %5.1f  h %6.1f +- %5.1f  aspect %.3f +- %.3f\n",
                name.c_str(), s.count, s.percent, s.width_mean, s.width_sd, s.height_mean,
                s.height_sd, s.aspect_mean, s.aspect_sd);
  };
  for (const auto& [label, stats] : eda.per_class) print_row(to_string(label), stats);
  print_row("overall", eda.overall);
  std::cout << "figures -> " << (out_dir / "eda_*.png").string() << "\n";
  return 0;
}

int cmd_split(const AppConfig& cfg) {
  const auto manifest = load_task_manifest(cfg);
  require(cfg.ratios.size() == 3, "split: exactly three ratios required");
  auto split = stratified_split(manifest, {cfg.ratios[0], cfg.ratios[1], cfg.ratios[2]},
                                cfg.split_seed);
  fs::create_directories(cfg.experiment_dir());
  write_splits_json(split, cfg.splits_path());
  std::cout << "splits: train " << split.count(Split::train) << ", val " << split.count(Split::val)
            << ", test " << split.count(Split::test) << " -> " << cfg.splits_path() << "\n";
  for (const auto& w : split.warnings) std::cerr << "  warning: " << w << "\n";
  return 0;
}

int cmd_sweep(const AppConfig& cfg, const std::vector<std::string>& policies) {
  const auto manifest = load_task_manifest(cfg);
  const auto splits = load_splits(cfg);
  const auto order = task_class_order(cfg.task);
  const auto train_ids = split_ids(splits, manifest, Split::train);
  const auto val_ids = split_ids(splits, manifest, Split::val);

  ModelConfig mc = scratch_model_config(cfg, "cnn_base", order.size());
  mc.init_seed = cfg.base_seed;
  TrainConfig tc = family_train_config(cfg, "cnn_base");

  CachedImageSource<float> val_src(manifest, val_ids, cfg.cache_dir, cfg.resolution, std::nullopt,
                                   cfg.base_seed);
  auto make_train = [&](const AugmentationPolicy& p) {
    return std::make_unique<CachedImageSource<float>>(manifest, train_ids, cfg.cache_dir,
                                                      cfg.resolution, p, cfg.base_seed);
  };
  auto table = augmentation_sweep<float>(policies, mc, tc, make_train, val_src, order);

  const fs::path out_dir = cfg.experiment_dir() / "sweep";
  write_json_artifact(cfg.provenance().stamp(sweep_to_json(table)), out_dir / "sweep.json");
  std::printf("%-22s %8s %10s %8s %8s\n", "policy", "val_acc", "precision", "recall", "f1");
  for (const auto& row : table.rows)
    std::printf("%-22s %8.4f %10.4f %8.4f %8.4f\n", row.policy.c_str(), row.val.accuracy,
                row.val.precision_macro, row.val.recall_macro, row.val.f1_macro);
  return 0;
}

int cmd_embed(const AppConfig& cfg, const std::string& kind_name, bool images, bool texts,
              bool use_template) {
  const BackboneKind kind = backbone_kind_from_string(kind_name);
  auto handle = load_backbone(kind, cfg.backbones.at(kind_name));
  const auto order = task_class_order(cfg.task);
  fs::create_directories(cfg.experiment_dir() / "embeddings");
  if (images) {
    const auto manifest = load_task_manifest(cfg);
    std::vector<std::uint64_t> ids;
    for (const auto& r : manifest.records) ids.push_back(r.image_id);
    auto emb = embed_images(handle, manifest, ids, cfg.cache_dir);
    const auto path = embeddings_path(cfg, kind_name + "_images");
    write_embedding_file(path, emb);
    std::cout << "image embeddings: " << emb.rows << " x " << emb.dim << " -> " << path << "\n";
  }
  if (texts) {
    auto emb = embed_texts(handle, prompts_for_classes(order, use_template));
    const auto path = embeddings_path(cfg, kind_name + "_texts");
    write_embedding_file(path, emb);
    std::cout << "text embeddings: " << emb.rows << " x " << emb.dim << " -> " << path << "\n";
  }
  return 0;
}

int cmd_train(const AppConfig& cfg, const std::vector<std::string>& families) {
  const auto manifest = load_task_manifest(cfg);
  const auto splits = load_splits(cfg);
  RunPaths paths{cfg.experiment_dir()};
  for (const auto& family : families) {
    std::cout << "training " << family << " (" << cfg.repeats << " repeats)\n";
    auto rr = repeat_runs(family, cfg.base_seed, cfg.repeats,
                          [&](std::size_t repeat, std::uint64_t seed) {
                            return run_family_repeat(cfg, family, repeat, seed, manifest, splits);
                          });
    write_json_artifact(cfg.provenance().stamp(aggregate_to_json(rr.aggregate)),
                        paths.family_dir(family) / "aggregate.json");
    nlohmann::json per_repeat = nlohmann::json::array();
    for (const auto& m : rr.repeats) per_repeat.push_back(m.accuracy);
    update_experiment_index(paths, cfg.provenance().stamp({{"kind", "train"},
                                                           {"family", family},
                                                           {"repeats", rr.repeats.size()},
                                                           {"partial", rr.partial},
                                                           {"accuracies", per_repeat}}));
    std::printf("  %s: accuracy %.4f +- %.4f over %zu repeats%s\n", family.c_str(),
                rr.aggregate.accuracy_mean, rr.aggregate.accuracy_sd, rr.repeats.size(),
                rr.partial ? " (partial)" : "");
  }
  return 0;
}

int cmd_evaluate(const AppConfig& cfg, const std::string& family, const std::string& which) {
  const auto manifest = load_task_manifest(cfg);
  const auto splits = load_splits(cfg);
  const auto order = task_class_order(cfg.task);
  const auto ids = split_ids(splits, manifest, split_from_string(which));
  RunPaths paths{cfg.experiment_dir()};

  for (std::size_t repeat = 0;; ++repeat) {
    const fs::path rdir = paths.repeat_dir(family, repeat);
    if (!fs::exists(rdir / "checkpoint.ntc")) {
      if (repeat == 0)
        throw Error("missing artifact: " + (rdir / "checkpoint.ntc").string() +
                    " (run 'stillact train --family " + family + "' first)");
      break;
    }
    const auto sidecar = read_json_artifact(rdir / "checkpoint.json");
    EvalResult<float> eval;
    if (family == "cnn_base" || family == "cnn_gen" || family == "fnn_base") {
      auto model = build_model<float>(model_config_from_json(sidecar.at("config")));
      load_checkpoint(model.net, (rdir / "checkpoint").string());
      CachedImageSource<float> src(manifest, ids, cfg.cache_dir, cfg.resolution, std::nullopt, 0);
      eval = evaluate(model.net, src, order);
    } else if (family == "clip_em") {
      const auto emb = require_embeddings(cfg, "clip_images", "stillact embed --images");
      auto model = build_embedding_mlp<float>(model_config_from_json(sidecar.at("config")));
      load_checkpoint(model.net, (rdir / "checkpoint").string());
      std::vector<std::size_t> labels;
      for (auto id : ids)
        for (const auto& r : manifest.records)
          if (r.image_id == id) labels.push_back(class_index(order, r.label));
      MatrixSource<float> src(embedding_rows_for_ids(emb, ids), labels);
      eval = evaluate(model.net, src, order);
    } else if (family == "clip_cs") {
      const auto imgs = require_embeddings(cfg, "clip_images", "stillact embed --images");
      const auto txts = require_embeddings(cfg, "clip_texts", "stillact embed --texts");
      const auto sim = similarity_features(imgs, txts, order);
      std::map<std::string, std::size_t> row_of;
      for (std::size_t i = 0; i < imgs.rows; ++i) row_of[imgs.row_keys[i]] = i;
      Tensor<float> rows({ids.size(), sim.classes});
      std::vector<std::size_t> labels;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t c = 0; c < sim.classes; ++c)
          rows.at(i, c) = static_cast<float>(sim.at(row_of.at(std::to_string(ids[i])), c));
        for (const auto& r : manifest.records)
          if (r.image_id == ids[i]) labels.push_back(class_index(order, r.label));
      }
      auto model = build_feature_mlp<float>(model_config_from_json(sidecar.at("config")));
      load_checkpoint(model.net, (rdir / "checkpoint").string());
      MatrixSource<float> src(rows, labels);
      eval = evaluate(model.net, src, order);
    } else {
      const BackboneKind kind = family_backbone_kind(family);
      auto handle = load_backbone(kind, cfg.backbones.at(to_string(kind)));
      auto model = attach_head(handle, order.size(), 0);
      load_checkpoint(static_cast<Layer<float>&>(model), (rdir / "checkpoint").string());
      BackboneImageSource src(manifest, ids, cfg.cache_dir, handle, order, std::nullopt, 0);
      eval = evaluate(model, src, order);
    }
    const Provenance prov{config_hash(cfg.to_json()), cfg.base_seed};
    write_json_artifact(prov.stamp({{"family", family},
                                    {"split", which},
                                    {"metrics", metrics_to_json(eval.metrics, eval.cm)},
                                    {"predictions", predictions_json(eval.predictions, ids, order)}}),
                        rdir / ("eval_" + which + ".json"));
    std::printf("%s repeat %zu on %s: accuracy %.4f macro-F1 %.4f\n", family.c_str(), repeat,
                which.c_str(), eval.metrics.accuracy, eval.metrics.f1_macro);
  }
  return 0;
}

int cmd_leaderboard(const AppConfig& cfg) {
  RunPaths paths{cfg.experiment_dir()};
  std::vector<AggregateMetrics> aggregates;
  std::map<std::string, std::vector<double>> accuracies;
  if (!fs::exists(paths.index()))
    throw Error("missing artifact: " + paths.index().string() + " (run 'stillact train' first)");
  const auto index = read_json_artifact(paths.index());
  for (const auto& run : index.at("runs")) {
    if (run.value("kind", "") != "train") continue;
    const std::string family = run.at("family").get<std::string>();
    aggregates.push_back(
        aggregate_from_json(read_json_artifact(paths.family_dir(family) / "aggregate.json")));
    accuracies[family] = run.at("accuracies").get<std::vector<double>>();
  }
  auto lb = build_leaderboard(aggregates);

  const auto csv = leaderboard_csv(lb);
  const fs::path csv_path = cfg.experiment_dir() / "leaderboard.csv";
  std::ofstream out(csv_path);
  out << csv;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : lb.rows) rows.push_back(aggregate_to_json(r));
  write_json_artifact(cfg.provenance().stamp({{"rows", rows}}),
                      cfg.experiment_dir() / "leaderboard.json");
  std::cout << csv;

  // significance: one-way anova over per-repeat accuracies, plus the paired
  // test between the two from-scratch baselines when both are present
  nlohmann::json stats;
  std::vector<std::vector<double>> groups;
  for (const auto& [family, accs] : accuracies)
    if (accs.size() >= 2) groups.push_back(accs);
  if (groups.size() >= 2) {
    try {
      const auto anova = one_way_anova(groups);
      stats["anova"] = {{"f", anova.f_statistic},
                        {"p", anova.p_value},
                        {"df_between", anova.df_between},
                        {"df_within", anova.df_within},
                        {"k", groups.size()}};
      std::printf("anova over %zu families: F=%.4f p=%.4g (df %zu,%zu)\n", groups.size(),
                  anova.f_statistic, anova.p_value, anova.df_between, anova.df_within);
    } catch (const Error& e) {
      stats["anova"] = {{"error", e.what()}};
    }
  }
  if (accuracies.count("cnn_base") && accuracies.count("fnn_base") &&
      accuracies["cnn_base"].size() == accuracies["fnn_base"].size()) {
    try {
      const auto tt = paired_t_test(accuracies["cnn_base"], accuracies["fnn_base"]);
      stats["paired_t_cnn_vs_fnn"] = {{"t", tt.t_statistic}, {"p", tt.p_value}, {"df", tt.df}};
      std::printf("paired t (cnn_base vs fnn_base): t=%.4f p=%.4f (df %zu)\n", tt.t_statistic,
                  tt.p_value, tt.df);
    } catch (const Error& e) {
      stats["paired_t_cnn_vs_fnn"] = {{"error", e.what()}};
    }
  }
  if (!stats.empty())
    write_json_artifact(cfg.provenance().stamp(stats), cfg.experiment_dir() / "stats.json");
  return 0;
}

int cmd_explain(const AppConfig& cfg, const std::string& family, std::uint64_t image_id,
                std::size_t repeat, std::size_t deletion_k) {
  const BackboneKind kind = family_backbone_kind(family);
  auto handle = load_backbone(kind, cfg.backbones.at(to_string(kind)));
  RunPaths paths{cfg.experiment_dir()};
  const fs::path ckpt = paths.repeat_dir(family, repeat) / "checkpoint";
  if (!fs::exists(ckpt.string() + ".ntc"))
    throw Error("missing artifact: " + ckpt.string() + ".ntc (run 'stillact train --family " +
                family + "' first)");
  const auto order = task_class_order(cfg.task);
  auto model = attach_head(handle, order.size(), 0);
  load_checkpoint(static_cast<Layer<float>&>(model), ckpt.string());

  const auto manifest = load_task_manifest(cfg);
  const ImageRecord* rec = nullptr;
  for (const auto& r : manifest.records)
    if (r.image_id == image_id) rec = &r;
  require(rec != nullptr, "image_id " + std::to_string(image_id) + " not in manifest");
  auto img = decode_image_file(cached_image_path(*rec, cfg.cache_dir).string());
  require(img.has_value(), "image not cached; run 'stillact dataset build --download'");
  const auto x = preprocess(*img, handle);

  const fs::path out_dir = cfg.experiment_dir() / "explain" / std::to_string(image_id);
  fs::create_directories(out_dir);
  const int r = static_cast<int>(handle.resolution());
  const Image display = resize_bilinear(*img, r, r);
  write_image(display, (out_dir / "original.png").string());
  for (std::size_t c = 0; c < order.size(); ++c) {
    auto map = legrad_saliency(model, x, c, order[c]);
    nlohmann::json j = cfg.provenance().stamp(saliency_to_json(map));
    if (deletion_k > 0) {
      const auto del = deletion_check(model, x, map, deletion_k, c,
                                      {0.f, 0.f, 0.f}, 20, cfg.base_seed);
      j["deletion"] = {{"k", deletion_k},
                       {"top_drop", del.top_drop},
                       {"random_drop_mean", del.random_drop_mean},
                       {"trials", del.trials}};
    }
    write_json_artifact(j, out_dir / ("saliency_" + order[c] + ".json"));
    write_image(saliency_overlay(display, map), (out_dir / ("saliency_" + order[c] + ".png")).string());
    std::cout << "saliency " << order[c] << " -> "
              << (out_dir / ("saliency_" + order[c] + ".png")).string()
              << (map.all_zero ? " (all-zero map)" : "") << "\n";
  }
  return 0;
}

int cmd_report_errors(const AppConfig& cfg) {
  const auto manifest = load_task_manifest(cfg);
  const auto order = task_class_order(cfg.task);
  RunPaths paths{cfg.experiment_dir()};
  const fs::path out_dir = cfg.experiment_dir() / "errors";
  fs::create_directories(out_dir);

  std::map<std::string, std::set<std::uint64_t>> wrong_by_family;
  bool any_family = false;
  for (const char* family : kAllFamilies) {
    const fs::path pred_path = paths.repeat_dir(family, 0) / "predictions.json";
    if (!fs::exists(pred_path)) continue;
    any_family = true;
    const auto doc = read_json_artifact(pred_path);
    std::vector<Prediction> wrong;
    std::vector<std::uint64_t> ids;
    std::set<std::uint64_t> wrong_ids;
    for (const auto& p : doc.at("predictions")) {
      const std::uint64_t id = p.at("image_id").get<std::uint64_t>();
      ids.push_back(id);
      if (p.at("true") != p.at("predicted")) {
        Prediction pred;
        pred.sample = ids.size() - 1;
        pred.label = static_cast<std::size_t>(
            std::find(order.begin(), order.end(), p.at("true").get<std::string>()) - order.begin());
        pred.predicted = static_cast<std::size_t>(
            std::find(order.begin(), order.end(), p.at("predicted").get<std::string>()) -
            order.begin());
        pred.confidence = p.at("confidence").get<double>();
        wrong.push_back(pred);
        wrong_ids.insert(id);
      }
    }
    wrong_by_family[family] = wrong_ids;
    render_misclassified_gallery(family, ids, wrong, manifest, cfg.cache_dir, order,
                                 out_dir / (std::string(family) + "_errors.png"));
    std::cout << family << ": " << wrong.size() << " misclassified"
              << (wrong.empty() ? " (empty gallery)" : "") << " -> "
              << (out_dir / (std::string(family) + "_errors.png")).string() << "\n";
  }
  if (!any_family)
    throw Error("missing artifact: no predictions.json under " + cfg.experiment_dir().string() +
                " (run 'stillact train' first)");

  // intersection across families
  std::set<std::uint64_t> common;
  bool first = true;
  for (const auto& [family, ids] : wrong_by_family) {
    if (first) {
      common = ids;
      first = false;
    } else {
      std::set<std::uint64_t> inter;
      std::set_intersection(common.begin(), common.end(), ids.begin(), ids.end(),
                            std::inserter(inter, inter.begin()));
      common = std::move(inter);
    }
  }
  nlohmann::json per_family;
  for (const auto& [family, ids] : wrong_by_family)
    per_family[family] = std::vector<std::uint64_t>(ids.begin(), ids.end());
  write_json_artifact(cfg.provenance().stamp(
                          {{"misclassified_by_all",
                            std::vector<std::uint64_t>(common.begin(), common.end())},
                           {"per_family", per_family}}),
                      out_dir / "cross_model.json");
  std::cout << "misclassified by all models: " << common.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"still-image activity classification experiment harness"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();  // global flags may appear after the subcommand

  AppConfig cfg;
  cfg.apply_env();
  std::string config_file;
  app.add_option("--config", config_file, "JSON config file (flags override it)")
      ->check(CLI::ExistingFile);
  app.add_option("--run-dir", cfg.run_dir, "run directory root");
  app.add_option("--experiment", cfg.experiment, "experiment name");
  app.add_option("--manifest", cfg.manifest, "manifest.jsonl path");
  app.add_option("--annotations", cfg.annotations, "curated annotation list (jsonl)");
  app.add_option("--cache-dir", cfg.cache_dir, "image cache directory");
  app.add_option("--task", cfg.task, "multiclass | binary")
      ->check(CLI::IsMember({"multiclass", "binary"}));
  app.add_option("--resolution", cfg.resolution, "scratch model input resolution");
  app.add_option("--seed", cfg.base_seed, "base seed for training repeats");
  app.add_option("--repeats", cfg.repeats, "number of seeded repeats");

  // dataset build | dataset eda
  auto* dataset = app.add_subcommand("dataset", "dataset construction and statistics");
  dataset->require_subcommand(1);
  auto* build = dataset->add_subcommand("build", "validate annotations into a manifest");
  bool do_download = false, offline = false;
  int parallelism = 8;
  build->add_flag("--download", do_download, "fetch and verify images into the cache");
  build->add_flag("--offline", offline, "never touch the network");
  build->add_option("--parallelism", parallelism, "concurrent fetches");
  auto* eda = dataset->add_subcommand("eda", "dimension statistics and figures");

  auto* split_cmd = app.add_subcommand("split", "deterministic stratified split");
  split_cmd->add_option("--seed", cfg.split_seed, "split seed");
  split_cmd->add_option("--ratios", cfg.ratios, "train val test fractions")->expected(3);

  auto* sweep_cmd = app.add_subcommand("sweep", "augmentation sweep over the base CNN");
  std::vector<std::string> sweep_policies;
  sweep_cmd->add_option("--policies", sweep_policies, "policy names (default: all ten)");

  auto* train_cmd = app.add_subcommand("train", "train families with seeded repeats");
  std::vector<std::string> families;
  train_cmd->add_option("--family", families, "family names")->required();

  auto* embed_cmd = app.add_subcommand("embed", "frozen embedding extraction");
  std::string embed_kind = "clip";
  bool embed_images_flag = false, embed_texts_flag = false, prompt_template = false;
  embed_cmd->add_option("--kind", embed_kind, "backbone kind (clip|siglip2|vit)");
  embed_cmd->add_flag("--images", embed_images_flag, "embed all manifest images");
  embed_cmd->add_flag("--texts", embed_texts_flag, "embed the class prompts");
  embed_cmd->add_flag("--template", prompt_template, "use the sentence prompt template");

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate checkpoints on a split");
  std::string eval_family, eval_split = "test";
  eval_cmd->add_option("--family", eval_family, "family name")->required();
  eval_cmd->add_option("--split", eval_split, "train|val|test");

  auto* lb_cmd = app.add_subcommand("leaderboard", "aggregate results and significance tests");

  auto* explain_cmd = app.add_subcommand("explain", "attention-gradient saliency maps");
  std::string explain_family = "clip_ic";
  std::uint64_t explain_image = 0;
  std::size_t explain_repeat = 0, deletion_k = 0;
  explain_cmd->add_option("--family", explain_family, "finetuned family (clip_ic|vit|siglip2)");
  explain_cmd->add_option("--image-id", explain_image, "manifest image id")->required();
  explain_cmd->add_option("--repeat", explain_repeat, "checkpoint repeat index");
  explain_cmd->add_option("--deletion-k", deletion_k, "also run the top-k deletion check");

  auto* errors_cmd = app.add_subcommand("report-errors", "misclassification galleries");

  CLI11_PARSE(app, argc, argv);
  try {
    if (!config_file.empty()) {
      // precedence: flags > config file > env > defaults
      AppConfig merged;
      merged.apply_env();
      merged.load_file(config_file);
      if (app.count("--run-dir")) merged.run_dir = cfg.run_dir;
      if (app.count("--experiment")) merged.experiment = cfg.experiment;
      if (app.count("--manifest")) merged.manifest = cfg.manifest;
      if (app.count("--annotations")) merged.annotations = cfg.annotations;
      if (app.count("--cache-dir")) merged.cache_dir = cfg.cache_dir;
      if (app.count("--task")) merged.task = cfg.task;
      if (app.count("--resolution")) merged.resolution = cfg.resolution;
      if (app.count("--seed")) merged.base_seed = cfg.base_seed;
      if (app.count("--repeats")) merged.repeats = cfg.repeats;
      if (split_cmd->count("--seed")) merged.split_seed = cfg.split_seed;
      if (split_cmd->count("--ratios")) merged.ratios = cfg.ratios;
      cfg = merged;
    }

    if (*build) return cmd_dataset_build(cfg, do_download, offline, parallelism);
    if (*eda) return cmd_dataset_eda(cfg);
    if (*split_cmd) return cmd_split(cfg);
    if (*sweep_cmd) {
      if (sweep_policies.empty())
        for (const auto& [p, name] : policy_names()) sweep_policies.push_back(name);
      return cmd_sweep(cfg, sweep_policies);
    }
    if (*train_cmd) return cmd_train(cfg, families);
    if (*embed_cmd) {
      if (!embed_images_flag && !embed_texts_flag)
        throw Error("embed: pass --images and/or --texts");
      return cmd_embed(cfg, embed_kind, embed_images_flag, embed_texts_flag, prompt_template);
    }
    if (*eval_cmd) return cmd_evaluate(cfg, eval_family, eval_split);
    if (*lb_cmd) return cmd_leaderboard(cfg);
    if (*explain_cmd)
      return cmd_explain(cfg, explain_family, explain_image, explain_repeat, deletion_k);
    if (*errors_cmd) return cmd_report_errors(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
