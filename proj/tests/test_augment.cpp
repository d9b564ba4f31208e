#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "stillact/augment/policy.hpp"
#include "stillact/augment/transforms.hpp"
#include "testutil.hpp"

using namespace stillact;

namespace {
bool same_pixels(const Image& a, const Image& b) {
  return a.height == b.height && a.width == b.width &&
         std::memcmp(a.px.data(), b.px.data(), a.px.size() * sizeof(float)) == 0;
}
}  // namespace

TEST_CASE("make_policy defaults") {
  REQUIRE(make_policy(PolicyName::rotation_15).param("degrees") == 15.0);
  REQUIRE(make_policy(PolicyName::baseline).parameters.empty());
  REQUIRE(make_policy(PolicyName::grayscale).param("p") == 1.0);
  REQUIRE(make_policy(PolicyName::random_resized_crop).param("scale_min") == 0.6);

  SECTION("unknown name lists the valid ones") {
    REQUIRE_THROWS_WITH(make_policy("cutmix"),
                        Catch::Matchers::ContainsSubstring("vertical_flip") &&
                            Catch::Matchers::ContainsSubstring("all_combined"));
  }
  SECTION("json round-trip") {
    auto p = make_policy(PolicyName::color_jitter);
    p.parameters["hue"] = 0.05;
    auto q = policy_from_json(policy_to_json(p));
    REQUIRE(q.name == p.name);
    REQUIRE(q.parameters == p.parameters);
  }
}

TEST_CASE("baseline is the identity at training resolution") {
  auto img = testutil::random_image(32, 32, 5);
  auto out = apply_policy(make_policy(PolicyName::baseline), img, 9, 32);
  REQUIRE(same_pixels(out.image, img));

  // off-resolution input gets resized
  auto out2 = apply_policy(make_policy(PolicyName::baseline), testutil::random_image(48, 40, 5), 9, 32);
  REQUIRE(out2.image.height == 32);
  REQUIRE(out2.image.width == 32);
}

TEST_CASE("deterministic vertical flip is an involution") {
  auto policy = make_policy(PolicyName::vertical_flip);
  policy.parameters["p"] = 1.0;
  auto img = testutil::random_image(32, 32, 11);
  auto once = apply_policy(policy, img, 1, 32);
  auto twice = apply_policy(policy, once.image, 2, 32);
  REQUIRE_FALSE(same_pixels(once.image, img));
  REQUIRE(same_pixels(twice.image, img));
}

TEST_CASE("flips preserve channel means exactly") {
  auto img = testutil::random_image(32, 32, 13);
  const auto before = channel_means(img);
  for (auto name : {PolicyName::horizontal_flip, PolicyName::vertical_flip}) {
    auto policy = make_policy(name);
    policy.parameters["p"] = 1.0;
    auto out = apply_policy(policy, img, 3, 32);
    const auto after = channel_means(out.image);
    for (int c = 0; c < 3; ++c) REQUIRE(after[c] == Catch::Approx(before[c]).margin(0.0));
  }
}

TEST_CASE("grayscale output has equal channels per pixel") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto img = testutil::random_image(8, 8, 1000 + s);
    auto out = apply_policy(make_policy(PolicyName::grayscale), img, s, 8);
    for (std::size_t i = 0; i < out.image.px.size(); i += 3) {
      REQUIRE(out.image.px[i] == out.image.px[i + 1]);
      REQUIRE(out.image.px[i] == out.image.px[i + 2]);
    }
  }
}

TEST_CASE("color jitter on a constant gray image matches the scalar oracle") {
  const float v = 0.375f;
  Image img(1, 1);
  img.px = {v, v, v};
  const std::uint64_t seed = 7;
  auto out = apply_policy(make_policy(PolicyName::color_jitter), img, seed, 1);

  // independent scalar path: replicate the draw order, then the pixel math.
  // gray input is invariant under contrast, saturation and hue, so the
  // expected value is just the clamped brightness scaling.
  Rng oracle_rng(derive_seed(seed, "color_jitter"));
  const double b = oracle_rng.uniform(0.6, 1.4);
  const float expected = std::clamp(v * static_cast<float>(b), 0.f, 1.f);
  REQUIRE(out.image.px[0] == Catch::Approx(expected).margin(1e-7));
  REQUIRE(out.image.px[1] == Catch::Approx(expected).margin(1e-7));
  REQUIRE(out.image.px[2] == Catch::Approx(expected).margin(1e-7));
  REQUIRE(expected != v);  // the draw at this seed actually shifts brightness
}

TEST_CASE("fixed seed means bit-identical output for every policy") {
  auto img = testutil::random_image(40, 56, 21);
  for (const auto& [name, str] : policy_names()) {
    auto policy = make_policy(name);
    auto a = apply_policy(policy, img, 1234, 32);
    auto b = apply_policy(policy, img, 1234, 32);
    INFO(str);
    REQUIRE(same_pixels(a.image, b.image));
    REQUIRE(a.image.height == 32);
    REQUIRE(a.image.width == 32);
  }
  // and seeds do matter for the stochastic geometry
  auto r1 = apply_policy(make_policy(PolicyName::rotation_15), img, 1, 32);
  auto r2 = apply_policy(make_policy(PolicyName::rotation_15), img, 2, 32);
  REQUIRE_FALSE(same_pixels(r1.image, r2.image));
}

TEST_CASE("all_combined equals its declared step composition") {
  auto img = testutil::random_image(48, 64, 33);
  auto combined = make_policy(PolicyName::all_combined);
  const std::uint64_t seed = 99;
  auto direct = apply_policy(combined, img, seed, 32);

  Image acc = img;
  std::uint64_t k = 0;
  for (const auto& step : combined_steps(combined)) {
    acc = apply_policy(step, acc, derive_seed(seed, "combined", k), 32).image;
    ++k;
  }
  REQUIRE(k == 5);
  REQUIRE(same_pixels(direct.image, acc));

  SECTION("step order is crop, perspective, vflip, jitter, blur") {
    auto steps = combined_steps(combined);
    REQUIRE(steps[0].name == PolicyName::random_resized_crop);
    REQUIRE(steps[1].name == PolicyName::perspective);
    REQUIRE(steps[2].name == PolicyName::vertical_flip);
    REQUIRE(steps[3].name == PolicyName::color_jitter);
    REQUIRE(steps[4].name == PolicyName::gaussian_blur);
  }
}

TEST_CASE("random resized crop falls back to center crop when degenerate") {
  auto policy = make_policy(PolicyName::random_resized_crop);
  // scale far below one pixel forces every attempt to fail on a tiny image
  policy.parameters["scale_min"] = 1e-6;
  policy.parameters["scale_max"] = 2e-6;
  Image img(4, 4, 0.5f);
  auto out = apply_policy(policy, img, 5, 8);
  REQUIRE(out.crop_fell_back_to_center);
  REQUIRE(out.image.height == 8);

  auto ok = apply_policy(make_policy(PolicyName::random_resized_crop),
                         testutil::random_image(64, 64, 2), 5, 32);
  REQUIRE_FALSE(ok.crop_fell_back_to_center);
}

TEST_CASE("rotation by zero degrees is identity, blur preserves constants") {
  auto img = testutil::random_image(16, 16, 3);
  auto rot = rotate_bilinear(img, 0.0);
  REQUIRE(same_pixels(rot, img));

  Image flat(9, 9, 0.25f);
  auto blurred = gaussian_blur(flat, 3, 1.0);
  for (float p : blurred.px) REQUIRE(p == Catch::Approx(0.25f).margin(1e-6));
}

TEST_CASE("empty image is rejected") {
  REQUIRE_THROWS_AS(apply_policy(make_policy(PolicyName::baseline), Image{}, 0, 32), Error);
}
