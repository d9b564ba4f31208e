#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <thread>

#include <httplib.h>

#include "stillact/backbone/embed.hpp"
#include "stillact/backbone/finetune.hpp"
#include "stillact/backbone/handle.hpp"
#include "stillact/backbone/tokenizer.hpp"
#include "stillact/explain/legrad.hpp"
#include "stillact/nn/loss.hpp"
#include "testutil.hpp"

using namespace stillact;

namespace {

Tokenizer tiny_tokenizer() {
  Tokenizer t;
  t.scheme = Tokenizer::Scheme::bpe;
  std::vector<std::string> pieces{"<bos>", "<eos>", "<unk>"};
  for (char c = 'a'; c <= 'z'; ++c) pieces.push_back(std::string(1, c));
  for (char c = 'a'; c <= 'z'; ++c) pieces.push_back(std::string(1, c) + "</w>");
  pieces.push_back("ng</w>");
  pieces.push_back("ing</w>");
  pieces.push_back("walking</w>");
  pieces.push_back("sitting</w>");
  pieces.push_back("standing</w>");
  for (std::size_t i = 0; i < pieces.size(); ++i) t.vocab[pieces[i]] = static_cast<int>(i);
  const std::vector<std::pair<std::string, std::string>> chain{
      {"n", "g</w>"},    {"i", "ng</w>"},     {"k", "ing</w>"},  {"l", "king</w>"},
      {"a", "lking</w>"}, {"w", "alking</w>"}, {"t", "ing</w>"},  {"t", "ting</w>"},
      {"i", "tting</w>"}, {"s", "itting</w>"}, {"d", "ing</w>"},  {"n", "ding</w>"},
      {"a", "nding</w>"}, {"t", "anding</w>"}, {"s", "tanding</w>"}};
  for (std::size_t r = 0; r < chain.size(); ++r) t.merges[chain[r]] = static_cast<int>(r);
  t.bos_id = 0;
  t.eos_id = 1;
  t.unk_id = 2;
  t.context_length = 16;
  for (const auto& p : pieces) t.max_piece_len = std::max(t.max_piece_len, p.size());
  return t;
}

VisionConfig tiny_vision_config(const std::string& pooling = "cls") {
  VisionConfig v;
  v.width = 8;
  v.layers = 2;
  v.heads = 2;
  v.patch_size = 4;
  v.resolution = 8;
  v.mlp_ratio = 2;
  v.embedding_dim = 6;
  v.activation = pooling == "cls" ? "quick_gelu" : "gelu";
  v.pooling = pooling;
  v.ln_pre = pooling == "cls";
  v.projection = true;
  return v;
}

TextConfig tiny_text_config() {
  TextConfig t;
  t.width = 8;
  t.layers = 1;
  t.heads = 2;
  t.context_length = 16;
  t.vocab_size = 64;
  t.mlp_ratio = 2;
  t.embedding_dim = 6;
  t.causal = true;
  t.pooling = "eot";
  t.projection = true;
  return t;
}

std::string write_tiny_backbone(const std::filesystem::path& dir, BackboneKind kind,
                                const std::string& id, std::uint64_t seed,
                                const std::string& pooling = "cls") {
  VisionTower<float> vision(tiny_vision_config(pooling));
  init_tower_random<float>(vision, seed, 0.2);
  const std::string path = (dir / (id + ".ntc")).string();
  PreprocessSpec pre;
  if (kind == BackboneKind::vit) {
    save_backbone(path, kind, id, vision, nullptr, nullptr, pre);
  } else {
    TextTower<float> text(tiny_text_config());
    init_tower_random<float>(text, seed + 1, 0.2);
    const Tokenizer tok = tiny_tokenizer();
    save_backbone(path, kind, id, vision, &text, &tok, pre);
  }
  return path;
}

Tensor<double> random_images(std::size_t b, std::size_t r, std::uint64_t seed) {
  Tensor<double> x({b, 3, r, r});
  Rng rng(seed);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace

TEST_CASE("bpe tokenizer hand cases") {
  const Tokenizer t = tiny_tokenizer();
  // "walking" is a single merged piece in the vocab via direct lookup
  const auto ids = t.encode("walking");
  REQUIRE(ids.front() == t.bos_id);
  REQUIRE(ids.back() == t.eos_id);
  REQUIRE(ids.size() == 3);
  REQUIRE(ids[1] == t.vocab.at("walking</w>"));

  // "sing" has no whole-word entry: s + ing</w> via the two merges
  const auto sing = t.encode("sing");
  REQUIRE(sing.size() == 4);
  REQUIRE(sing[1] == t.vocab.at("s"));
  REQUIRE(sing[2] == t.vocab.at("ing</w>"));

  // uppercase folds, words split, unknown bytes become unk
  REQUIRE(t.encode("WALKING") == t.encode("walking"));
  const auto two = t.encode("walking sitting");
  REQUIRE(two.size() == 4);

  SECTION("json round-trip") {
    const Tokenizer back = Tokenizer::from_json(t.to_json());
    REQUIRE(back.encode("standing walking") == t.encode("standing walking"));
    REQUIRE(back.vocab.size() == t.vocab.size());
  }
}

TEST_CASE("unigram tokenizer viterbi picks the best segmentation") {
  Tokenizer t;
  t.scheme = Tokenizer::Scheme::unigram;
  const std::string m = "\xe2\x96\x81";  // whitespace marker
  std::vector<std::pair<std::string, double>> pieces{
      {"<eos>", -100}, {"<unk>", -100},
      {m + "sit", -2.0}, {m + "sitting", -3.0}, {"ting", -2.5},
      {m, -1.0}, {"s", -4.0}, {"i", -4.0}, {"t", -4.0}, {"n", -4.0}, {"g", -4.0},
  };
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    t.vocab[pieces[i].first] = static_cast<int>(i);
    t.piece_scores[pieces[i].first] = pieces[i].second;
    t.max_piece_len = std::max(t.max_piece_len, pieces[i].first.size());
  }
  t.eos_id = 0;
  t.unk_id = 1;
  t.context_length = 16;

  // best path: "_sitting" as _sitting (-3) beats _sit+ting (-4.5)
  const auto ids = t.encode("sitting");
  REQUIRE(ids.size() == 2);
  REQUIRE(ids[0] == t.vocab.at(m + "sitting"));
  REQUIRE(ids[1] == t.eos_id);

  const Tokenizer back = Tokenizer::from_json(t.to_json());
  REQUIRE(back.encode("sitting") == ids);
}

TEST_CASE("finetune model passes finite-difference gradient checks") {
  for (const std::string pooling : {"cls", "mean", "map"}) {
    VisionConfig vc = tiny_vision_config(pooling);
    auto tower = std::make_shared<VisionTower<double>>(vc);
    init_tower_random<double>(*tower, 7, 0.25);
    FinetuneModel<double> model(tower, 3, 11);

    auto x = random_images(2, vc.resolution, 21);
    const std::vector<std::size_t> labels{0, 2};
    auto params = parameters_of<double>(static_cast<Layer<double>&>(model));
    zero_grads(params);
    Context ctx{false, nullptr};
    Tensor<double> dlogits;
    softmax_cross_entropy(model.forward(x, ctx), labels, &dlogits);
    model.backward(dlogits);
    std::vector<Tensor<double>> analytic;
    for (auto& p : params) analytic.push_back(*p.grad);

    const double h = 1e-5;
    double worst = 0;
    Rng pick(31);
    for (std::size_t k = 0; k < params.size(); ++k) {
      // spot-check a handful of coordinates per tensor to keep runtime sane
      for (int probe = 0; probe < 4; ++probe) {
        const std::size_t i = pick.bounded(params[k].value->size());
        const double orig = (*params[k].value)[i];
        (*params[k].value)[i] = orig + h;
        const double lp = softmax_cross_entropy(model.forward(x, ctx), labels);
        (*params[k].value)[i] = orig - h;
        const double lm = softmax_cross_entropy(model.forward(x, ctx), labels);
        (*params[k].value)[i] = orig;
        const double num = (lp - lm) / (2 * h);
        const double ana = analytic[k][i];
        worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}));
      }
    }
    INFO("pooling " << pooling << " worst rel err " << worst);
    REQUIRE(worst < 1e-4);
  }
}

TEST_CASE("backbone save/load round-trip and integrity") {
  testutil::TempDir tmp("backbone");
  const auto path = write_tiny_backbone(tmp.path, BackboneKind::clip, "tiny-clip", 5);

  auto handle = load_backbone(BackboneKind::clip, path);
  REQUIRE(handle.embedding_dim == 6);
  REQUIRE(handle.patch_size == 4);
  REQUIRE(handle.is_vision_language());

  SECTION("loading twice gives identical metadata and embeddings") {
    auto again = load_backbone(BackboneKind::clip, path);
    REQUIRE(again.weights_id == handle.weights_id);
    REQUIRE(again.embedding_dim == handle.embedding_dim);
    auto e1 = embed_texts(handle, {"walking"});
    auto e2 = embed_texts(again, {"walking"});
    REQUIRE(std::memcmp(e1.values.data(), e2.values.data(), e1.values.size() * 4) == 0);
  }
  SECTION("kind mismatch is rejected") {
    REQUIRE_THROWS_WITH(load_backbone(BackboneKind::vit, path),
                        Catch::Matchers::ContainsSubstring("clip"));
  }
  SECTION("truncated weights fail the checksum, no partial handle") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
    REQUIRE_THROWS_WITH(load_backbone(BackboneKind::clip, path),
                        Catch::Matchers::ContainsSubstring("checksum"));
  }
}

TEST_CASE("hub resolution: offline, cache, http fetch") {
  testutil::TempDir cache("hubcache");
  testutil::TempDir served("hubsrv");
  write_tiny_backbone(served.path, BackboneKind::clip, "demo-weights", 9);

  HubOptions opts;
  opts.cache_dir = cache.str();
  opts.offline = true;
  SECTION("offline miss names the cache path") {
    REQUIRE_THROWS_WITH(resolve_backbone_weights("demo-weights", opts),
                        Catch::Matchers::ContainsSubstring("demo-weights.ntc"));
  }
  SECTION("no hub url configured is an actionable error") {
    opts.offline = false;
    REQUIRE_THROWS_WITH(resolve_backbone_weights("demo-weights", opts),
                        Catch::Matchers::ContainsSubstring("export_backbone"));
  }
  SECTION("fetches once, then serves from cache") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.set_mount_point("/weights", served.str());
    server.set_pre_routing_handler([&](const httplib::Request&, httplib::Response&) {
      hits.fetch_add(1);
      return httplib::Server::HandlerResponse::Unhandled;
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread st([&] { server.listen_after_bind(); });
    while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(5));

    opts.offline = false;
    opts.hub_url = "http://127.0.0.1:" + std::to_string(port) + "/weights";
    const auto p1 = resolve_backbone_weights("demo-weights", opts);
    REQUIRE(std::filesystem::exists(p1));
    const auto p2 = resolve_backbone_weights("demo-weights", opts);
    REQUIRE(p1 == p2);
    REQUIRE(hits.load() == 1);
    auto handle = load_backbone(BackboneKind::clip, "demo-weights", opts);
    REQUIRE(handle.weights_id == "demo-weights");
    server.stop();
    st.join();
  }
}

TEST_CASE("preprocess contract") {
  testutil::TempDir tmp("prep");
  auto handle = load_backbone(
      BackboneKind::clip, write_tiny_backbone(tmp.path, BackboneKind::clip, "prep", 3));

  SECTION("shape and determinism") {
    auto img = testutil::random_image(30, 46, 4);
    auto a = preprocess(img, handle);
    auto b = preprocess(img, handle);
    REQUIRE(a.shape() == std::vector<std::size_t>{3, 8, 8});
    REQUIRE(std::memcmp(a.data(), b.data(), a.size() * 4) == 0);
  }
  SECTION("constant image maps to the normalized constant") {
    Image flat(12, 20, 0.625f);
    auto t = preprocess(flat, handle);
    for (std::size_t i = 0; i < t.size(); ++i)
      REQUIRE(t[i] == Catch::Approx((0.625 - 0.5) / 0.5).margin(1e-6));
  }
}

TEST_CASE("embed_images: order, duplicates, all-or-nothing") {
  testutil::TempDir tmp("embed");
  testutil::TempDir cache("embedcache");
  auto handle = load_backbone(
      BackboneKind::clip, write_tiny_backbone(tmp.path, BackboneKind::clip, "emb", 8));

  std::vector<ImageRecord> recs;
  for (int i = 0; i < 4; ++i) {
    auto rec = testutil::make_record(200 + i, 320, 240, kAllLabels[i % 3]);
    recs.push_back(rec);
  }
  auto manifest = build_manifest(recs);
  for (const auto& r : manifest.records)
    write_image(testutil::random_image(r.height, r.width, r.image_id),
                cached_image_path(r, cache.path).string());

  std::vector<std::uint64_t> ids{203, 200, 201, 200};  // out of order plus a duplicate
  auto emb = embed_images(handle, manifest, ids, cache.path);
  REQUIRE(emb.rows == 4);
  REQUIRE(emb.dim == 6);
  REQUIRE(emb.row_keys == std::vector<std::string>{"203", "200", "201", "200"});
  // duplicate id gives identical rows (order-stable, deterministic)
  REQUIRE(std::memcmp(emb.row(1), emb.row(3), emb.dim * 4) == 0);
  REQUIRE(std::memcmp(emb.row(0), emb.row(1), emb.dim * 4) != 0);

  SECTION("single image gives 1 x d") {
    auto one = embed_images(handle, manifest, {202}, cache.path);
    REQUIRE(one.rows == 1);
    REQUIRE(one.dim == 6);
  }
  SECTION("batched extraction equals serial extraction") {
    auto serial = embed_images(handle, manifest, ids, cache.path, 1);
    for (std::size_t i = 0; i < emb.values.size(); ++i)
      REQUIRE(serial.values[i] == Catch::Approx(emb.values[i]).margin(1e-5));
  }
  SECTION("undecodable cache entry fails the whole call naming the id") {
    std::filesystem::resize_file(cached_image_path(manifest.records[1], cache.path), 4);
    REQUIRE_THROWS_WITH(embed_images(handle, manifest, ids, cache.path),
                        Catch::Matchers::ContainsSubstring(
                            std::to_string(manifest.records[1].image_id)));
  }
}

TEST_CASE("embed_texts and prompt mapping") {
  testutil::TempDir tmp("texts");
  auto clip = load_backbone(
      BackboneKind::clip, write_tiny_backbone(tmp.path, BackboneKind::clip, "txt", 2));

  const auto prompts = prompts_for_classes({"walking_running", "sitting", "standing"});
  REQUIRE(prompts == std::vector<std::string>{"walking", "sitting", "standing"});
  const auto templated = prompts_for_classes({"sitting"}, true);
  REQUIRE(templated[0] == "a photo of a person sitting");

  auto emb = embed_texts(clip, prompts);
  REQUIRE(emb.rows == 3);
  REQUIRE(emb.dim == 6);
  REQUIRE(emb.source == EmbeddingSource::text);

  SECTION("identical prompts embed identically") {
    auto two = embed_texts(clip, {"walking", "walking"});
    REQUIRE(std::memcmp(two.row(0), two.row(1), two.dim * 4) == 0);
  }
  SECTION("single prompt") {
    REQUIRE(embed_texts(clip, {"standing"}).rows == 1);
  }
  SECTION("image-only towers reject text encoding") {
    auto vit = load_backbone(BackboneKind::vit,
                             write_tiny_backbone(tmp.path, BackboneKind::vit, "v", 4));
    REQUIRE_THROWS_WITH(embed_texts(vit, prompts),
                        Catch::Matchers::ContainsSubstring("unsupported"));
  }
}

TEST_CASE("similarity features") {
  SECTION("hand case 8/9 plus self and orthogonal rows") {
    EmbeddingMatrix imgs;
    imgs.rows = 3;
    imgs.dim = 3;
    imgs.values = {1, 2, 2,   2, 1, 2,   1, 0, 0};
    imgs.row_keys = {"a", "b", "c"};
    EmbeddingMatrix txts = imgs;
    txts.source = EmbeddingSource::text;
    txts.rows = 2;
    txts.values = {2, 1, 2,   0, 1, 0};
    txts.row_keys = {"t0", "t1"};

    auto sim = similarity_features(imgs, txts);
    REQUIRE(sim.at(0, 0) == Catch::Approx(8.0 / 9.0).margin(1e-9));
    REQUIRE(sim.at(1, 0) == Catch::Approx(1.0).margin(1e-9));        // identical vectors
    REQUIRE(sim.at(2, 1) == Catch::Approx(0.0).margin(1e-12));       // orthogonal
    REQUIRE(sim.class_order == std::vector<std::string>{"t0", "t1"});
  }
  SECTION("bounds and positive-rescaling invariance on random pairs") {
    Rng rng(55);
    EmbeddingMatrix imgs, txts;
    imgs.rows = 200;
    imgs.dim = 16;
    txts.rows = 3;
    txts.dim = 16;
    for (std::size_t i = 0; i < imgs.rows * imgs.dim; ++i)
      imgs.values.push_back(static_cast<float>(rng.normal()));
    for (std::size_t i = 0; i < txts.rows * txts.dim; ++i)
      txts.values.push_back(static_cast<float>(rng.normal()));
    for (std::size_t i = 0; i < imgs.rows; ++i) imgs.row_keys.push_back(std::to_string(i));
    txts.row_keys = {"x", "y", "z"};

    auto sim = similarity_features(imgs, txts);
    auto scaled = imgs;
    for (std::size_t i = 0; i < scaled.rows; ++i) {
      const float factor = static_cast<float>(0.1 + 5 * rng.uniform());
      for (std::size_t d = 0; d < scaled.dim; ++d) scaled.values[i * scaled.dim + d] *= factor;
    }
    auto sim2 = similarity_features(scaled, txts);
    for (std::size_t i = 0; i < sim.values.size(); ++i) {
      REQUIRE(std::abs(sim.values[i]) <= 1.0 + 1e-6);
      REQUIRE(sim2.values[i] == Catch::Approx(sim.values[i]).margin(1e-6));
    }
  }
  SECTION("zero-norm rows are rejected by key") {
    EmbeddingMatrix imgs;
    imgs.rows = 1;
    imgs.dim = 2;
    imgs.values = {0, 0};
    imgs.row_keys = {"dead_row"};
    EmbeddingMatrix txts;
    txts.rows = 1;
    txts.dim = 2;
    txts.values = {1, 0};
    txts.row_keys = {"t"};
    REQUIRE_THROWS_WITH(similarity_features(imgs, txts),
                        Catch::Matchers::ContainsSubstring("dead_row"));
    REQUIRE_THROWS_AS(similarity_features(txts, imgs), Error);
  }
  SECTION("dimension mismatch is rejected") {
    EmbeddingMatrix a, b;
    a.rows = 1; a.dim = 2; a.values = {1, 0}; a.row_keys = {"a"};
    b.rows = 1; b.dim = 3; b.values = {1, 0, 0}; b.row_keys = {"b"};
    REQUIRE_THROWS_AS(similarity_features(a, b), Error);
  }
}

TEST_CASE("attach_head isolates fine-tuning from the frozen tower") {
  testutil::TempDir tmp("attach");
  auto handle = load_backbone(
      BackboneKind::clip, write_tiny_backbone(tmp.path, BackboneKind::clip, "ft", 12));
  auto model = attach_head(handle, 3, 42);

  Context ctx{false, nullptr};
  Tensor<float> imgs({2, 3, 8, 8});
  Rng rng(1);
  for (std::size_t i = 0; i < imgs.size(); ++i) imgs[i] = static_cast<float>(rng.uniform());
  auto logits = model.forward(imgs, ctx);
  REQUIRE(logits.shape() == std::vector<std::size_t>{2, 3});

  // tweak the model tower; the handle's tower must be untouched
  auto params = parameters_of<float>(static_cast<Layer<float>&>(model));
  REQUIRE(params.size() > 2);  // all backbone parameters are trainable
  for (auto& p : params) (*p.value)[0] += 1.0f;
  std::vector<ParamRef<float>> handle_params;
  handle.vision->collect_params("", handle_params);
  auto fresh = attach_head(handle, 3, 42);
  auto fresh_logits = fresh.forward(imgs, ctx);
  REQUIRE(std::memcmp(fresh_logits.data(), logits.data(), logits.size() * 4) == 0);

  SECTION("binary head variant") {
    auto binary = attach_head(handle, 2, 7);
    REQUIRE(binary.forward(imgs, ctx).shape() == std::vector<std::size_t>{2, 2});
  }
  SECTION("frozen backbone exposes only head parameters") {
    auto frozen = attach_head(handle, 3, 7);
    frozen.freeze_backbone(true);
    auto fp = parameters_of<float>(static_cast<Layer<float>&>(frozen));
    REQUIRE(fp.size() == 2);
  }
}

TEST_CASE("legrad saliency properties on a tiny tower") {
  testutil::TempDir tmp("legrad");
  auto handle = load_backbone(
      BackboneKind::clip, write_tiny_backbone(tmp.path, BackboneKind::clip, "sal", 19));
  auto model = attach_head(handle, 3, 5);

  auto img = testutil::random_image(8, 8, 77);
  const auto x = preprocess(img, handle);

  auto map = legrad_saliency(model, x, 1, "sitting");
  REQUIRE(map.grid == 2);  // 8 / 4
  REQUIRE(map.values.size() == 4);
  REQUIRE(map.layer_count == 2);
  double mx = 0;
  for (double v : map.values) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    mx = std::max(mx, v);
  }
  REQUIRE(mx == Catch::Approx(1.0));
  REQUIRE_FALSE(map.all_zero);

  SECTION("deterministic across calls") {
    auto again = legrad_saliency(model, x, 1, "sitting");
    REQUIRE(again.values == map.values);
  }
  SECTION("zero head weights give the flagged all-zero map") {
    auto zeroed = attach_head(handle, 3, 5);
    auto params = parameters_of<float>(static_cast<Layer<float>&>(zeroed));
    for (auto& p : params)
      if (p.name.rfind("head.", 0) == 0) p.value->fill(0.f);
    auto zmap = legrad_saliency(zeroed, x, 1, "sitting");
    REQUIRE(zmap.all_zero);
    for (double v : zmap.values) REQUIRE(v == 0.0);
  }
  SECTION("deletion check boundaries") {
    const std::array<float, 3> mask{0.0f, 0.0f, 0.0f};
    auto none = deletion_check(model, x, map, 0, 1, mask, 5, 3);
    REQUIRE(none.top_drop == 0.0);
    REQUIRE(none.random_drop_mean == 0.0);
    auto all = deletion_check(model, x, map, 4, 1, mask, 5, 3);
    REQUIRE(all.top_drop == Catch::Approx(all.random_drop_mean).margin(1e-9));
  }
  SECTION("json rendering") {
    auto j = saliency_to_json(map);
    REQUIRE(j.at("grid").size() == 2);
    REQUIRE(j.at("normalization") == "minmax");
  }
}

TEST_CASE("vit kind loads without text tower") {
  testutil::TempDir tmp("vitk");
  auto vit = load_backbone(BackboneKind::vit,
                           write_tiny_backbone(tmp.path, BackboneKind::vit, "vv", 6));
  REQUIRE_FALSE(vit.is_vision_language());
  REQUIRE(vit.tokenizer == nullptr);
  auto model = attach_head(vit, 2, 3);
  Context ctx{false, nullptr};
  Tensor<float> imgs({1, 3, 8, 8}, 0.1f);
  REQUIRE(model.forward(imgs, ctx).shape() == std::vector<std::size_t>{1, 2});
}
