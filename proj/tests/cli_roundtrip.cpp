// Drives the built CLI binary through the whole pipeline on a synthetic
// workspace: annotations + warm image cache + a tiny backbone, then
// build/eda/split/sweep/embed/train/evaluate/leaderboard/explain/report-errors.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/backbone/handle.hpp"
#include "stillact/backbone/tokenizer.hpp"
#include "stillact/backbone/towers.hpp"
#include "stillact/core/image.hpp"
#include "stillact/dataset/manifest.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using namespace stillact;

namespace {

int checks = 0, failures = 0;

void expect(bool ok, const std::string& what) {
  ++checks;
  if (!ok) {
    ++failures;
    std::cerr << "FAILED: " << what << "\n";
  }
}

std::string g_cli;

int run(const std::string& args, bool expect_ok = true) {
  const std::string cmd = g_cli + " " + args + " >> /tmp/stillact_cli_log.txt 2>&1";
  const int rc = std::system(cmd.c_str());
  const int code = WEXITSTATUS(rc);
  if (expect_ok) expect(code == 0, "command exited " + std::to_string(code) + ": " + args);
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tokenizer tiny_tokenizer() {
  Tokenizer t;
  std::vector<std::string> pieces{"<bos>", "<eos>", "<unk>"};
  for (char c = 'a'; c <= 'z'; ++c) pieces.push_back(std::string(1, c));
  for (char c = 'a'; c <= 'z'; ++c) pieces.push_back(std::string(1, c) + "</w>");
  for (std::size_t i = 0; i < pieces.size(); ++i) t.vocab[pieces[i]] = static_cast<int>(i);
  t.bos_id = 0;
  t.eos_id = 1;
  t.unk_id = 2;
  t.context_length = 32;
  for (const auto& p : pieces) t.max_piece_len = std::max(t.max_piece_len, p.size());
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: cli_roundtrip <path-to-stillact-binary>\n";
    return 2;
  }
  g_cli = argv[1];
  std::remove("/tmp/stillact_cli_log.txt");

  testutil::TempDir ws("cliws");
  const fs::path runs = ws.path / "runs";
  const fs::path cache = ws.path / "cache";
  fs::create_directories(cache);

  // synthetic dataset: 12 per class at 320x240, cache pre-warmed
  std::vector<ImageRecord> recs;
  std::uint64_t id = 7000;
  {
    std::ofstream ann(ws.path / "annotations.jsonl");
    for (int cls = 0; cls < 3; ++cls)
      for (int i = 0; i < 12; ++i) {
        auto rec = testutil::make_record(id, 320, 240, kAllLabels[cls]);
        auto img = testutil::synthetic_image(240, 320, cls, id);
        write_image(img, (cache / (std::to_string(id) + ".png")).string());
        ann << record_to_json(rec).dump() << "\n";
        recs.push_back(rec);
        ++id;
      }
  }

  // tiny vision-language backbone on disk
  const fs::path bb_path = ws.path / "tiny-clip.ntc";
  {
    VisionConfig vc;
    vc.width = 16;
    vc.layers = 2;
    vc.heads = 2;
    vc.patch_size = 4;
    vc.resolution = 16;
    vc.mlp_ratio = 2;
    vc.embedding_dim = 12;
    vc.activation = "quick_gelu";
    vc.pooling = "cls";
    VisionTower<float> vision(vc);
    init_tower_random<float>(vision, 3, 0.25);
    TextConfig tc;
    tc.width = 16;
    tc.layers = 1;
    tc.heads = 2;
    tc.context_length = 32;
    tc.vocab_size = 64;
    tc.mlp_ratio = 2;
    tc.embedding_dim = 12;
    TextTower<float> text(tc);
    init_tower_random<float>(text, 4, 0.25);
    const Tokenizer tok = tiny_tokenizer();
    save_backbone(bb_path.string(), BackboneKind::clip, "tiny-clip", vision, &text, &tok, {});
  }

  // config file wiring everything together
  const fs::path config = ws.path / "config.json";
  {
    nlohmann::json j{
        {"annotations", (ws.path / "annotations.jsonl").string()},
        {"cache_dir", cache.string()},
        {"run_dir", runs.string()},
        {"experiment", "e2e"},
        {"resolution", 16},
        {"repeats", 2},
        {"base_seed", 7},
        {"backbones", {{"clip", bb_path.string()}}},
        {"train", {{"default", {{"max_epochs", 2}, {"batch_size", 8}, {"patience", 5}}}}}};
    std::ofstream out(config);
    out << j.dump(2);
  }
  const std::string base = "--config " + config.string();
  const fs::path exp = runs / "e2e";

  // ---- pipeline ----
  run("dataset build " + base + " --download --offline");
  expect(fs::exists(exp / "manifest.jsonl"), "manifest written");
  expect(fs::exists(exp / "integrity.json"), "integrity report written");

  run("dataset eda " + base);
  for (const char* f : {"eda.json", "eda_scatter.png", "eda_box.png", "eda_aspect_hist.png",
                        "eda_overlay_hist.png", "eda_figures.json"})
    expect(fs::exists(exp / "eda" / f), std::string("eda artifact ") + f);

  // evaluate before training must fail naming the missing artifact
  expect(run("evaluate --family cnn_base " + base, false) != 0, "evaluate-before-train fails");

  run("split " + base + " --seed 42 --ratios 0.8 0.1 0.1");
  expect(fs::exists(exp / "splits.json"), "splits written");
  const std::string splits_bytes = slurp(exp / "splits.json");
  run("split " + base + " --seed 42 --ratios 0.8 0.1 0.1");
  expect(slurp(exp / "splits.json") == splits_bytes, "split re-run is byte-identical");
  {
    const auto j = nlohmann::json::parse(splits_bytes);
    int train = 0, val = 0, test = 0;
    for (const auto& [k, v] : j.at("membership").items()) {
      if (v == "train") ++train;
      if (v == "val") ++val;
      if (v == "test") ++test;
    }
    // 12 per class at 80/10/10 -> 10/1/1 per class
    expect(train == 30 && val == 3 && test == 3, "split counts 30/3/3");
  }

  run("sweep " + base + " --policies baseline vertical_flip");
  expect(fs::exists(exp / "sweep" / "sweep.json"), "sweep artifact");
  {
    const auto j = nlohmann::json::parse(slurp(exp / "sweep" / "sweep.json"));
    expect(j.at("rows").size() == 2, "sweep rows");
    expect(j.contains("config_hash") && j.contains("code_version"), "sweep provenance");
  }

  run("embed " + base + " --kind clip --images --texts");
  expect(fs::exists(exp / "embeddings" / "clip_images.emb"), "image embeddings");
  expect(fs::exists(exp / "embeddings" / "clip_texts.emb"), "text embeddings");

  run("train " + base + " --family cnn_base --family fnn_base --family clip_em "
      "--family clip_cs --family clip_ic");
  for (const char* fam : {"cnn_base", "fnn_base", "clip_em", "clip_cs", "clip_ic"}) {
    expect(fs::exists(exp / fam / "aggregate.json"), std::string(fam) + " aggregate");
    for (const char* art : {"config.json", "trainlog.json", "metrics.json", "predictions.json",
                            "checkpoint.ntc", "checkpoint.json"})
      expect(fs::exists(exp / fam / "1" / art), std::string(fam) + "/1/" + art);
  }
  expect(fs::exists(exp / "experiment.json"), "experiment index");

  run("evaluate --family cnn_base " + base);
  expect(fs::exists(exp / "cnn_base" / "0" / "eval_test.json"), "evaluate artifact");
  {
    // checkpoint-based evaluation reproduces the training-time test metrics
    const auto train_m = nlohmann::json::parse(slurp(exp / "cnn_base" / "0" / "metrics.json"));
    const auto eval_m = nlohmann::json::parse(slurp(exp / "cnn_base" / "0" / "eval_test.json"));
    const double a = train_m.at("metrics").at("accuracy").get<double>();
    const double b = eval_m.at("metrics").at("accuracy").get<double>();
    expect(std::abs(a - b) < 1e-9, "evaluate matches trained metrics");
  }

  run("leaderboard " + base);
  expect(fs::exists(exp / "leaderboard.csv"), "leaderboard csv");
  expect(fs::exists(exp / "leaderboard.json"), "leaderboard json");
  expect(fs::exists(exp / "stats.json"), "stats json");
  {
    const auto j = nlohmann::json::parse(slurp(exp / "stats.json"));
    expect(j.contains("anova"), "anova present");
    expect(j.contains("paired_t_cnn_vs_fnn"), "paired t present");
    const auto lb = nlohmann::json::parse(slurp(exp / "leaderboard.json"));
    expect(lb.at("rows").size() == 5, "leaderboard rows");
    double prev = 2.0;
    for (const auto& row : lb.at("rows")) {
      const double acc = row.at("accuracy").at("mean").get<double>();
      expect(acc <= prev + 1e-12, "leaderboard sorted by accuracy desc");
      prev = acc;
    }
  }

  run("explain " + base + " --family clip_ic --image-id " + std::to_string(recs.front().image_id) +
      " --deletion-k 2");
  {
    const fs::path dir = exp / "explain" / std::to_string(recs.front().image_id);
    for (const char* cls : {"walking_running", "sitting", "standing"}) {
      expect(fs::exists(dir / ("saliency_" + std::string(cls) + ".png")), "saliency png");
      expect(fs::exists(dir / ("saliency_" + std::string(cls) + ".json")), "saliency json");
    }
    const auto j = nlohmann::json::parse(slurp(dir / "saliency_sitting.json"));
    expect(j.at("grid").size() == 4, "patch grid 4x4");
    expect(j.contains("deletion"), "deletion block present");
  }

  run("report-errors " + base);
  expect(fs::exists(exp / "errors" / "cross_model.json"), "cross-model table");
  expect(fs::exists(exp / "errors" / "cnn_base_errors.png"), "per-model gallery");

  // unknown subcommand and unknown flag produce usage errors
  expect(run("no-such-command", false) != 0, "unknown subcommand fails");
  expect(run("split --no-such-flag 3 " + base, false) != 0, "unknown flag fails");

  std::cout << (failures == 0 ? "PASS" : "FAIL") << " cli_roundtrip: " << (checks - failures)
            << "/" << checks << " checks passed\n";
  if (failures) std::cout << "see /tmp/stillact_cli_log.txt for the command log\n";
  return failures == 0 ? 0 : 1;
}
