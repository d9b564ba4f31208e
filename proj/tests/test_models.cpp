#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "stillact/nn/loss.hpp"
#include "stillact/nn/model.hpp"
#include "stillact/nn/optimizer.hpp"
#include "testutil.hpp"

using namespace stillact;

namespace {

Tensor<double> random_input(std::vector<std::size_t> shape, std::uint64_t seed) {
  Tensor<double> x(shape);
  Rng rng(seed);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal() * 0.5;
  return x;
}

// Central finite differences against the analytic backward pass, 64-bit.
double max_grad_rel_error(Layer<double>& net, const Tensor<double>& x,
                          const std::vector<std::size_t>& labels) {
  auto params = parameters_of(net);
  zero_grads(params);
  Context ctx{true, nullptr};
  Tensor<double> dlogits;
  softmax_cross_entropy(net.forward(x, ctx), labels, &dlogits);
  net.backward(dlogits);

  std::vector<Tensor<double>> analytic;
  for (auto& p : params) analytic.push_back(*p.grad);

  auto loss_at = [&]() {
    Context c{true, nullptr};
    return softmax_cross_entropy(net.forward(x, c), labels);
  };

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<double>& value = *params[k].value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + h;
      const double lp = loss_at();
      value[i] = orig - h;
      const double lm = loss_at();
      value[i] = orig;
      const double numeric = (lp - lm) / (2 * h);
      const double ana = analytic[k][i];
      const double denom = std::max({std::abs(numeric), std::abs(ana), 1e-6});
      worst = std::max(worst, std::abs(numeric - ana) / denom);
    }
  }
  return worst;
}

ModelConfig toy_config(ModelFamily family) {
  ModelConfig cfg;
  cfg.family = family;
  cfg.num_classes = 3;
  cfg.init_seed = 17;
  cfg.dropout_conv = 0.0;  // gradient checks need a deterministic loss
  cfg.dropout_fc = 0.0;
  switch (family) {
    case ModelFamily::fnn_base:
      cfg.input_shape = {3, 8, 8};
      cfg.hidden = {4};
      break;
    case ModelFamily::cnn_base:
    case ModelFamily::cnn_gen:
      cfg.input_shape = {3, 8, 8};
      cfg.conv_channels = {2, 3, 4};
      cfg.fc_hidden = 4;
      break;
    case ModelFamily::embedding_mlp:
      cfg.input_shape = {5};
      cfg.hidden = {4, 3};
      cfg.batch_norm = true;
      break;
    case ModelFamily::feature_mlp:
      cfg.input_shape = {3};
      cfg.hidden = {4};
      break;
  }
  return cfg;
}

Tensor<double> toy_batch(const ModelConfig& cfg, std::size_t b, std::uint64_t seed) {
  std::vector<std::size_t> shape{b};
  for (auto d : cfg.input_shape) shape.push_back(d);
  return random_input(shape, seed);
}

}  // namespace

TEST_CASE("gradient check: all five families at toy size") {
  const std::vector<std::size_t> labels{0, 1, 2, 0};
  for (ModelFamily family :
       {ModelFamily::fnn_base, ModelFamily::cnn_base, ModelFamily::cnn_gen,
        ModelFamily::embedding_mlp, ModelFamily::feature_mlp}) {
    auto cfg = toy_config(family);
    auto model = build_model<double>(cfg);
    REQUIRE(parameter_count(model.net) <= 1000);
    auto x = toy_batch(cfg, 4, 99 + static_cast<std::uint64_t>(family));
    if (family == ModelFamily::feature_mlp)
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::tanh(x[i]);  // cosine-like inputs
    const double err = max_grad_rel_error(model.net, x, labels);
    INFO("family " << to_string(family) << " rel err " << err);
    REQUIRE(err < 1e-4);
  }
}

TEST_CASE("cnn shape arithmetic") {
  SECTION("224 input produces the documented flatten width") {
    ModelConfig cfg = toy_config(ModelFamily::cnn_base);
    cfg.input_shape = {3, 224, 224};
    cfg.conv_channels = {32, 64, 128};
    cfg.fc_hidden = 256;
    auto model = build_cnn<float>(cfg, false);
    // fc1 weight is (fc_hidden, 128 * 28 * 28)
    bool found = false;
    for (auto& p : model.parameters())
      if (p.name == "fc1.weight") {
        REQUIRE(p.value->shape() == std::vector<std::size_t>{256, 100352});
        found = true;
      }
    REQUIRE(found);
  }
  SECTION("minimal case flattens to one unit and emits (B,2) logits") {
    ModelConfig cfg = toy_config(ModelFamily::cnn_base);
    cfg.conv_channels = {1, 1, 1};
    cfg.num_classes = 2;
    auto model = build_cnn<double>(cfg, false);
    Context ctx{false, nullptr};
    auto logits = model.forward(random_input({5, 3, 8, 8}, 3), ctx);
    REQUIRE(logits.shape() == std::vector<std::size_t>{5, 2});
    for (auto& p : model.parameters())
      if (p.name == "fc1.weight") REQUIRE(p.value->dim(1) == 1);
  }
  SECTION("indivisible spatial dims are rejected with the constraint") {
    ModelConfig cfg = toy_config(ModelFamily::cnn_base);
    cfg.input_shape = {3, 30, 30};
    REQUIRE_THROWS_WITH(build_cnn<double>(cfg, false),
                        Catch::Matchers::ContainsSubstring("divisible by 8"));
  }
}

TEST_CASE("cnn_gen differs from cnn_base by 3 batchnorm and 4 dropout sites") {
  auto cfg = toy_config(ModelFamily::cnn_gen);
  cfg.dropout_conv = 0.25;
  cfg.dropout_fc = 0.5;
  auto base = build_cnn<double>(cfg, false);
  auto gen = build_cnn<double>(cfg, true);

  auto count_kind = [](const std::vector<std::string>& kinds, const std::string& k) {
    return std::count(kinds.begin(), kinds.end(), k);
  };
  auto base_kinds = base.net.layer_kinds();
  auto gen_kinds = gen.net.layer_kinds();
  REQUIRE(count_kind(base_kinds, "batchnorm") == 0);
  REQUIRE(count_kind(base_kinds, "dropout") == 0);
  REQUIRE(count_kind(gen_kinds, "batchnorm") == 3);
  REQUIRE(count_kind(gen_kinds, "dropout") == 4);

  // weight-bearing shapes are identical (regularization layers preserve shape)
  auto shapes = [](Model<double>& m) {
    std::vector<std::vector<std::size_t>> out;
    for (auto& p : m.parameters())
      if (p.name.find("gamma") == std::string::npos && p.name.find("beta") == std::string::npos)
        out.push_back(p.value->shape());
    return out;
  };
  REQUIRE(shapes(base) == shapes(gen));
}

TEST_CASE("fnn closed-form parameter count and degenerate hidden list") {
  ModelConfig cfg = toy_config(ModelFamily::fnn_base);
  cfg.input_shape = {3, 224, 224};
  cfg.hidden = {4};
  auto model = build_fnn<float>(cfg);
  REQUIRE(parameter_count(model.net) == 150528u * 4 + 4 + 4 * 3 + 3);

  cfg.hidden = {};
  auto affine = build_fnn<double>(cfg);
  REQUIRE_FALSE(affine.notes.empty());
  REQUIRE(parameter_count(affine.net) == 150528u * 3 + 3);

  SECTION("hidden widths 512/128 formula at a smaller input") {
    ModelConfig c2 = toy_config(ModelFamily::fnn_base);
    c2.input_shape = {3, 16, 16};
    c2.hidden = {512, 128};
    auto m2 = build_fnn<float>(c2);
    REQUIRE(parameter_count(m2.net) ==
            768u * 512 + 512 + 512u * 128 + 128 + 128u * 3 + 3);
  }
}

TEST_CASE("zero-weight model emits its biases, softmax rows sum to one") {
  auto cfg = toy_config(ModelFamily::fnn_base);
  auto model = build_fnn<double>(cfg);
  for (auto& p : model.parameters()) p.value->fill(0.0);
  auto params = model.parameters();
  // set head bias to recognizable values
  for (auto& p : params)
    if (p.name == "head.bias") {
      (*p.value)[0] = 0.25;
      (*p.value)[1] = -1.5;
      (*p.value)[2] = 3.0;
    }
  Context ctx{false, nullptr};
  auto logits = model.forward(random_input({3, 3, 8, 8}, 5), ctx);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(logits.at(i, 0) == 0.25);
    REQUIRE(logits.at(i, 1) == -1.5);
    REQUIRE(logits.at(i, 2) == 3.0);
  }
  auto probs = softmax_rows(logits);
  for (std::size_t i = 0; i < probs.dim(0); ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < probs.dim(1); ++j) sum += probs.at(i, j);
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("embedding mlp eval determinism and batching consistency") {
  ModelConfig cfg = toy_config(ModelFamily::embedding_mlp);
  cfg.input_shape = {512};
  cfg.hidden = {16, 8};
  cfg.dropout_fc = 0.5;  // dropout present but eval must ignore it
  auto model = build_embedding_mlp<double>(cfg);

  // touch running statistics with a few train steps first
  Rng rng(4);
  Context train_ctx{true, &rng};
  for (int i = 0; i < 3; ++i) model.forward(random_input({8, 512}, 10 + i), train_ctx);

  auto x = random_input({4, 512}, 77);
  Context eval_ctx{false, nullptr};
  auto a = model.forward(x, eval_ctx);
  auto b = model.forward(x, eval_ctx);
  REQUIRE(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);

  // single sample equals its batched version in eval mode
  Tensor<double> single({1, 512});
  for (std::size_t i = 0; i < 512; ++i) single[i] = x.at(2, i);
  auto lone = model.forward(single, eval_ctx);
  for (std::size_t j = 0; j < 3; ++j)
    REQUIRE(lone.at(0, j) == Catch::Approx(a.at(2, j)).margin(1e-5));

  SECTION("accepts a 285x512 matrix and emits 285x3 logits") {
    auto logits = model.forward(random_input({285, 512}, 6), eval_ctx);
    REQUIRE(logits.shape() == std::vector<std::size_t>{285, 3});
  }
  SECTION("d=1, C=2 single hidden unit parameter count without norm layers") {
    ModelConfig tiny;
    tiny.family = ModelFamily::embedding_mlp;
    tiny.input_shape = {1};
    tiny.hidden = {1};
    tiny.num_classes = 2;
    tiny.batch_norm = false;
    tiny.dropout_fc = 0.0;
    auto m = build_embedding_mlp<double>(tiny);
    REQUIRE(parameter_count(m.net) == 6);
  }
}

TEST_CASE("feature mlp validates cosine inputs") {
  auto cfg = toy_config(ModelFamily::feature_mlp);
  auto model = build_feature_mlp<double>(cfg);
  Context ctx{false, nullptr};
  auto logits = model.forward(random_input({4, 3}, 2).reshaped({4, 3}), ctx);
  REQUIRE(logits.shape() == std::vector<std::size_t>{4, 3});

  Tensor<double> bad({2, 3});
  bad[0] = 0.5;
  bad[1] = 1.5;  // outside the cosine range
  REQUIRE_THROWS_WITH(validate_cosine_features(bad), Catch::Matchers::ContainsSubstring("1.5"));
  Tensor<double> ok({2, 3}, 0.999999);
  REQUIRE_NOTHROW(validate_cosine_features(ok));

  SECTION("binary variant accepted") {
    ModelConfig c2 = cfg;
    c2.num_classes = 2;
    auto m2 = build_feature_mlp<double>(c2);
    auto l2 = m2.forward(random_input({3, 2}, 9), ctx);
    REQUIRE(l2.shape() == std::vector<std::size_t>{3, 2});
  }
}

TEST_CASE("dropout: train stochastic, eval identity, inverted scaling") {
  Dropout<double> drop(0.4);
  Tensor<double> ones({50, 20}, 1.0);
  Rng rng(8);
  Context train_ctx{true, &rng};
  Context eval_ctx{false, nullptr};

  auto eval_out = drop.forward(ones, eval_ctx);
  REQUIRE(std::memcmp(eval_out.data(), ones.data(), ones.size() * 8) == 0);

  // Monte-Carlo mean of train-mode outputs approaches the eval output
  double sum = 0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    auto out = drop.forward(ones, train_ctx);
    for (std::size_t i = 0; i < out.size(); ++i) sum += out[i];
  }
  const double mc_mean = sum / (reps * static_cast<double>(ones.size()));
  REQUIRE(mc_mean == Catch::Approx(1.0).margin(0.02));

  auto a = drop.forward(ones, train_ctx);
  auto b = drop.forward(ones, train_ctx);
  REQUIRE(std::memcmp(a.data(), b.data(), a.size() * 8) != 0);
}

TEST_CASE("non-finite activations raise an error naming the layer") {
  auto model = build_fnn<double>(toy_config(ModelFamily::fnn_base));
  Tensor<double> x({1, 3, 8, 8}, std::numeric_limits<double>::infinity());
  Context ctx{false, nullptr};
  REQUIRE_THROWS_WITH(model.forward(x, ctx), Catch::Matchers::ContainsSubstring("after layer"));
}

TEST_CASE("checkpoint round-trip restores exact behavior") {
  testutil::TempDir tmp("ckpt");
  ModelConfig cfg = toy_config(ModelFamily::embedding_mlp);
  auto model = build_embedding_mlp<double>(cfg);
  Rng rng(3);
  Context train_ctx{true, &rng};
  model.forward(random_input({6, 5}, 1), train_ctx);  // move the running stats

  auto x = random_input({3, 5}, 2);
  Context eval_ctx{false, nullptr};
  const auto before = model.forward(x, eval_ctx);

  const auto stem = (tmp.path / "model").string();
  nlohmann::json sidecar{{"family", to_string(cfg.family)},
                         {"config", model_config_to_json(model.config)},
                         {"seed", 17},
                         {"epoch", 3}};
  save_checkpoint(model.net, sidecar, stem);

  auto fresh = build_embedding_mlp<double>(cfg);
  auto loaded_meta = load_checkpoint(fresh.net, stem);
  REQUIRE(loaded_meta.at("epoch") == 3);
  const auto after = fresh.forward(x, eval_ctx);
  REQUIRE(std::memcmp(before.data(), after.data(), before.size() * 8) == 0);

  SECTION("sidecar serialization is byte-stable") {
    save_checkpoint(fresh.net, sidecar, stem + "_again");
    std::ifstream f1(stem + ".json"), f2(stem + "_again.json");
    std::string s1{std::istreambuf_iterator<char>(f1), std::istreambuf_iterator<char>()};
    std::string s2{std::istreambuf_iterator<char>(f2), std::istreambuf_iterator<char>()};
    REQUIRE(s1 == s2);
    REQUIRE_FALSE(s1.empty());
  }
}

TEST_CASE("adamw decays zero-gradient parameters by the decoupled factor") {
  Tensor<double> w({2, 2}, 1.0);
  Tensor<double> g({2, 2}, 0.0);
  std::vector<ParamRef<double>> params{{"w", &w, &g}};
  AdamW<double>::Options opts;
  opts.lr = 0.1;
  opts.weight_decay = 0.01;
  AdamW<double> opt(params, opts);
  opt.step();
  for (std::size_t i = 0; i < w.size(); ++i)
    REQUIRE(w[i] == Catch::Approx(1.0 * (1 - 0.1 * 0.01)).margin(1e-15));
  opt.step();
  const double twice = (1 - 0.1 * 0.01) * (1 - 0.1 * 0.01);
  for (std::size_t i = 0; i < w.size(); ++i) REQUIRE(w[i] == Catch::Approx(twice).margin(1e-15));
}
