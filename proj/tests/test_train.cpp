#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "stillact/train/data.hpp"
#include "stillact/train/harness.hpp"
#include "stillact/train/repeat.hpp"
#include "stillact/train/sweep.hpp"
#include "testutil.hpp"

using namespace stillact;

namespace {

const std::vector<std::string> kOrder{"walking_running", "sitting", "standing"};

// 12-image toy set: 3 classes x 4 noisy structured images
ImageMemorySource<double> toy_image_source(int resolution, std::uint64_t seed,
                                           std::optional<AugmentationPolicy> policy = std::nullopt) {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  for (int cls = 0; cls < 3; ++cls)
    for (int i = 0; i < 4; ++i) {
      images.push_back(testutil::synthetic_image(resolution, resolution, cls,
                                                 seed + static_cast<std::uint64_t>(4 * cls + i)));
      labels.push_back(static_cast<std::size_t>(cls));
    }
  return ImageMemorySource<double>(std::move(images), std::move(labels), resolution,
                                   std::move(policy), seed);
}

ModelConfig small_cnn_config(int resolution) {
  ModelConfig cfg;
  cfg.family = ModelFamily::cnn_base;
  cfg.input_shape = {3, static_cast<std::size_t>(resolution), static_cast<std::size_t>(resolution)};
  cfg.conv_channels = {8, 12, 16};
  cfg.fc_hidden = 32;
  cfg.init_seed = 1;
  return cfg;
}

}  // namespace

TEST_CASE("early stopping rules") {
  auto train_src = toy_image_source(16, 10);
  auto val_src = toy_image_source(16, 20);

  SECTION("constant validation metric stops at epoch 2 with patience 1") {
    auto model = build_cnn<double>(small_cnn_config(16), false);
    TrainConfig cfg;
    cfg.lr = 1e-30;  // effectively frozen weights -> metric cannot improve
    cfg.patience = 1;
    cfg.max_epochs = 10;
    cfg.batch_size = 4;
    auto log = train(model.net, train_src, val_src, cfg, kOrder);
    REQUIRE(log.stopped_epoch == 2);
    REQUIRE(log.best_epoch == 1);
  }

  SECTION("no early stop means stopped_epoch equals max epochs") {
    auto model = build_cnn<double>(small_cnn_config(16), false);
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.patience = 100;
    cfg.batch_size = 4;
    auto log = train(model.net, train_src, val_src, cfg, kOrder);
    REQUIRE(log.stopped_epoch == 3);
    REQUIRE(log.train_loss.size() == 3);
    REQUIRE(log.best_epoch >= 1);
    REQUIRE(log.best_epoch <= log.stopped_epoch);
  }

  SECTION("restored parameters reproduce the logged best val metric") {
    auto model = build_cnn<double>(small_cnn_config(16), false);
    TrainConfig cfg;
    cfg.max_epochs = 6;
    cfg.patience = 2;
    cfg.batch_size = 4;
    auto log = train(model.net, train_src, val_src, cfg, kOrder);
    const auto best = log.val_metrics[log.best_epoch - 1];
    const auto re = evaluate(model.net, val_src, kOrder).metrics;
    REQUIRE(re.accuracy == Catch::Approx(best.accuracy).margin(1e-6));
    REQUIRE(re.f1_macro == Catch::Approx(best.f1_macro).margin(1e-6));
    // best val metric is the max over the logged epochs
    for (const auto& m : log.val_metrics) REQUIRE(best.f1_macro >= m.f1_macro - 1e-12);
  }
}

TEST_CASE("training is deterministic in single-threaded mode") {
  auto run_once = [] {
    auto train_src = toy_image_source(16, 10, make_policy(PolicyName::horizontal_flip));
    auto val_src = toy_image_source(16, 20);
    auto model = build_cnn<double>(small_cnn_config(16), false);
    TrainConfig cfg;
    cfg.max_epochs = 4;
    cfg.patience = 10;
    cfg.batch_size = 4;
    cfg.seed = 77;
    return train(model.net, train_src, val_src, cfg, kOrder);
  };
  const auto a = run_once();
  const auto b = run_once();
  REQUIRE(a.train_loss.size() == b.train_loss.size());
  for (std::size_t i = 0; i < a.train_loss.size(); ++i)
    REQUIRE(std::memcmp(&a.train_loss[i], &b.train_loss[i], sizeof(double)) == 0);
}

TEST_CASE("overfit sanity: scratch families hit 100% on the 12-image toy set") {
  auto train_src = toy_image_source(16, 30);
  struct Case {
    std::string name;
    std::function<Model<double>()> build;
  };
  ModelConfig cnn_cfg = small_cnn_config(16);
  ModelConfig fnn_cfg;
  fnn_cfg.family = ModelFamily::fnn_base;
  fnn_cfg.input_shape = {3, 16, 16};
  fnn_cfg.hidden = {64, 16};
  fnn_cfg.init_seed = 2;
  ModelConfig gen_cfg = cnn_cfg;
  gen_cfg.dropout_conv = 0.05;  // keep regularization mild enough to memorize
  gen_cfg.dropout_fc = 0.1;

  const std::vector<Case> cases{
      {"cnn_base", [&] { return build_cnn<double>(cnn_cfg, false); }},
      {"cnn_gen", [&] { return build_cnn<double>(gen_cfg, true); }},
      {"fnn_base", [&] { return build_fnn<double>(fnn_cfg); }},
  };
  for (const auto& c : cases) {
    auto model = c.build();
    TrainConfig cfg;
    cfg.max_epochs = 500;
    cfg.patience = 500;  // run on train metric plateau only
    cfg.batch_size = 4;
    cfg.seed = 5;
    auto log = train(model.net, train_src, train_src, cfg, kOrder);
    const auto final_eval = evaluate(model.net, train_src, kOrder).metrics;
    INFO(c.name << " stopped at " << log.stopped_epoch);
    REQUIRE(log.stopped_epoch <= 500);
    REQUIRE(final_eval.accuracy == 1.0);
    // loss monotone sanity: best epoch improved on the first epoch
    REQUIRE(log.train_loss[log.best_epoch - 1] < log.train_loss.front());
  }
}

TEST_CASE("divergence aborts with the last finite epoch logged") {
  auto train_src = toy_image_source(16, 40);
  auto model = build_cnn<double>(small_cnn_config(16), false);
  TrainConfig cfg;
  cfg.lr = 1e18;  // guaranteed blow-up
  cfg.max_epochs = 10;
  cfg.batch_size = 4;
  auto log = train(model.net, train_src, train_src, cfg, kOrder);
  REQUIRE(log.aborted);
  REQUIRE_FALSE(log.abort_reason.empty());
  REQUIRE(log.train_loss.size() < 10);
}

TEST_CASE("repeat_runs aggregates seeded repetitions") {
  SECTION("identical repeats give zero sigma") {
    MetricReport fixed;
    fixed.accuracy = 0.7;
    fixed.precision_macro = 0.6;
    fixed.recall_macro = 0.65;
    fixed.f1_macro = 0.62;
    auto rr = repeat_runs("demo", 42, 5, [&](std::size_t, std::uint64_t) { return fixed; });
    REQUIRE(rr.repeats.size() == 5);
    REQUIRE(rr.aggregate.accuracy_mean == Catch::Approx(0.7));
    REQUIRE(rr.aggregate.accuracy_sd == 0.0);
    REQUIRE_FALSE(rr.partial);
    // derived seeds are distinct
    for (std::size_t i = 0; i < rr.repeat_seeds.size(); ++i)
      for (std::size_t j = i + 1; j < rr.repeat_seeds.size(); ++j)
        REQUIRE(rr.repeat_seeds[i] != rr.repeat_seeds[j]);
  }
  SECTION("hand-computed mean and sample sigma") {
    const std::vector<double> accs{0.6, 0.62, 0.64, 0.66, 0.68};
    std::size_t call = 0;
    auto rr = repeat_runs("demo", 1, 5, [&](std::size_t, std::uint64_t) {
      MetricReport m;
      m.accuracy = accs[call++];
      return m;
    });
    REQUIRE(rr.aggregate.accuracy_mean == Catch::Approx(0.64).margin(1e-12));
    REQUIRE(rr.aggregate.accuracy_sd == Catch::Approx(0.031622776601).margin(1e-9));
  }
  SECTION("aborted repeats mark the result partial") {
    auto rr = repeat_runs("demo", 9, 4, [&](std::size_t i, std::uint64_t) {
      if (i == 2) return std::optional<MetricReport>{};
      MetricReport m;
      m.accuracy = 0.5 + 0.1 * static_cast<double>(i);
      return std::optional<MetricReport>{m};
    });
    REQUIRE(rr.partial);
    REQUIRE(rr.repeats.size() == 3);
    REQUIRE(rr.aggregate.repeats == 3);
  }
  SECTION("k below 2 is rejected") {
    REQUIRE_THROWS_AS(repeat_runs("x", 1, 1, [](std::size_t, std::uint64_t) {
      return MetricReport{};
    }), Error);
  }
}

TEST_CASE("repeat seeds change training but not the data") {
  auto make_runner = [](std::uint64_t seed) {
    auto train_src = toy_image_source(16, 10);
    auto val_src = toy_image_source(16, 20);
    auto cfg = small_cnn_config(16);
    cfg.init_seed = seed;
    auto model = build_cnn<double>(cfg, false);
    TrainConfig tc;
    tc.max_epochs = 2;
    tc.patience = 10;
    tc.batch_size = 4;
    tc.seed = seed;
    return train(model.net, train_src, val_src, tc, kOrder);
  };
  const auto a = make_runner(derive_seed(42, "repeat", std::uint64_t{0}));
  const auto b = make_runner(derive_seed(42, "repeat", std::uint64_t{1}));
  REQUIRE(a.train_loss.front() != b.train_loss.front());
}

TEST_CASE("augmentation sweep shapes and determinism") {
  const int res = 8;
  ModelConfig cfg;
  cfg.family = ModelFamily::cnn_base;
  cfg.input_shape = {3, 8, 8};
  cfg.conv_channels = {2, 3, 4};
  cfg.fc_hidden = 8;
  cfg.init_seed = 3;
  TrainConfig tc;
  tc.max_epochs = 2;
  tc.patience = 5;
  tc.batch_size = 4;
  tc.seed = 11;

  auto make_train = [&](const AugmentationPolicy& p) {
    return std::make_unique<ImageMemorySource<double>>(
        std::vector<Image>{testutil::synthetic_image(res, res, 0, 1),
                           testutil::synthetic_image(res, res, 1, 2),
                           testutil::synthetic_image(res, res, 2, 3),
                           testutil::synthetic_image(res, res, 0, 4),
                           testutil::synthetic_image(res, res, 1, 5),
                           testutil::synthetic_image(res, res, 2, 6)},
        std::vector<std::size_t>{0, 1, 2, 0, 1, 2}, res, p, 99);
  };
  auto val = toy_image_source(res, 50);

  SECTION("single policy gives one row") {
    auto table = augmentation_sweep<double>({"baseline"}, cfg, tc, make_train, val, kOrder);
    REQUIRE(table.rows.size() == 1);
    REQUIRE(table.rows[0].policy == "baseline");
  }
  SECTION("all ten policies give ten sorted rows, reproducibly") {
    std::vector<std::string> all;
    for (const auto& [p, name] : policy_names()) all.push_back(name);
    auto t1 = augmentation_sweep<double>(all, cfg, tc, make_train, val, kOrder);
    auto t2 = augmentation_sweep<double>(all, cfg, tc, make_train, val, kOrder);
    REQUIRE(t1.rows.size() == 10);
    for (std::size_t i = 1; i < t1.rows.size(); ++i)
      REQUIRE(t1.rows[i - 1].val.accuracy >= t1.rows[i].val.accuracy);
    REQUIRE(sweep_to_json(t1) == sweep_to_json(t2));
  }
  SECTION("unknown policy is rejected") {
    REQUIRE_THROWS_AS(augmentation_sweep<double>({"mixup"}, cfg, tc, make_train, val, kOrder),
                      Error);
  }
}
