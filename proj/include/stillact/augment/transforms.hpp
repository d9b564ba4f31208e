#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "stillact/augment/policy.hpp"
#include "stillact/core/image.hpp"
#include "stillact/core/rng.hpp"

// Image transforms behind the augmentation policies. Everything here is our
// own arithmetic (no library warps) so that a (policy, image, seed) triple
// maps to bit-identical pixels on every machine. Geometric warps use bilinear
// interpolation with reflection padding; photometric steps clamp to [0,1].

namespace stillact {

struct ApplyResult {
  Image image;
  bool crop_fell_back_to_center = false;  // random crop exhausted its attempts
};

inline float luma(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

inline Image flip_horizontal(const Image& src) {
  Image dst(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  return dst;
}

inline Image flip_vertical(const Image& src) {
  Image dst(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = src.at(src.height - 1 - y, x, c);
  return dst;
}

inline Image rotate_bilinear(const Image& src, double degrees) {
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (src.height - 1) / 2.0, cx = (src.width - 1) / 2.0;
  Image dst(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      // inverse mapping: rotate destination coordinates back into the source
      const double dy = y - cy, dx = x - cx;
      const float sy = static_cast<float>(cy + dy * cs - dx * sn);
      const float sx = static_cast<float>(cx + dy * sn + dx * cs);
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = sample_bilinear_reflect(src, sy, sx, c);
    }
  return dst;
}

inline Image to_grayscale(const Image& src) {
  Image dst(src.height, src.width);
  for (std::size_t i = 0; i < src.px.size(); i += 3) {
    const float l = luma(src.px[i], src.px[i + 1], src.px[i + 2]);
    dst.px[i] = dst.px[i + 1] = dst.px[i + 2] = l;
  }
  return dst;
}

inline Image gaussian_blur(const Image& src, int kernel, double sigma) {
  const int radius = kernel / 2;
  std::vector<float> w(kernel);
  float sum = 0.f;
  for (int i = 0; i < kernel; ++i) {
    const double d = i - radius;
    w[i] = static_cast<float>(std::exp(-d * d / (2.0 * sigma * sigma)));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;

  auto reflect = [](int v, int n) {
    if (n == 1) return 0;
    while (v < 0 || v >= n) v = v < 0 ? -v : 2 * (n - 1) - v;
    return v;
  };
  Image mid(src.height, src.width), dst(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0.f;
        for (int i = 0; i < kernel; ++i) acc += w[i] * src.at(y, reflect(x - radius + i, src.width), c);
        mid.at(y, x, c) = acc;
      }
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0.f;
        for (int i = 0; i < kernel; ++i) acc += w[i] * mid.at(reflect(y - radius + i, src.height), x, c);
        dst.at(y, x, c) = acc;
      }
  return dst;
}

struct JitterFactors {
  double brightness = 1.0, contrast = 1.0, saturation = 1.0, hue_shift = 0.0;
};

/// Factor draws, in documented order: brightness, contrast, saturation, hue.
inline JitterFactors draw_jitter_factors(const AugmentationPolicy& p, Rng& rng) {
  JitterFactors f;
  const double br = p.param("brightness"), co = p.param("contrast");
  const double sa = p.param("saturation"), hu = p.param("hue");
  f.brightness = rng.uniform(std::max(0.0, 1.0 - br), 1.0 + br);
  f.contrast = rng.uniform(std::max(0.0, 1.0 - co), 1.0 + co);
  f.saturation = rng.uniform(std::max(0.0, 1.0 - sa), 1.0 + sa);
  f.hue_shift = rng.uniform(-hu, hu);
  return f;
}

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  const float d = mx - mn;
  s = mx == 0.f ? 0.f : d / mx;
  if (d == 0.f) {
    h = 0.f;
  } else if (mx == r) {
    h = std::fmod((g - b) / d + 6.f, 6.f);
  } else if (mx == g) {
    h = (b - r) / d + 2.f;
  } else {
    h = (r - g) / d + 4.f;
  }
  h /= 6.f;  // [0,1)
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float hh = std::fmod(std::fmod(h, 1.f) + 1.f, 1.f) * 6.f;
  const int i = std::min(5, static_cast<int>(hh));
  const float f = hh - i;
  const float p = v * (1.f - s), q = v * (1.f - s * f), t = v * (1.f - s * (1.f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

/// Jitter pixel math, fixed application order brightness -> contrast ->
/// saturation -> hue, each step clamped to [0,1].
inline Image apply_jitter(const Image& src, const JitterFactors& f) {
  Image img = src;
  auto clamp01 = [](float v) { return std::clamp(v, 0.f, 1.f); };
  for (auto& v : img.px) v = clamp01(v * static_cast<float>(f.brightness));

  double mean_l = 0.0;
  for (std::size_t i = 0; i < img.px.size(); i += 3)
    mean_l += luma(img.px[i], img.px[i + 1], img.px[i + 2]);
  mean_l /= std::max<std::size_t>(1, img.px.size() / 3);
  const float ml = static_cast<float>(mean_l), c = static_cast<float>(f.contrast);
  for (auto& v : img.px) v = clamp01((v - ml) * c + ml);

  const float s = static_cast<float>(f.saturation);
  for (std::size_t i = 0; i < img.px.size(); i += 3) {
    const float l = luma(img.px[i], img.px[i + 1], img.px[i + 2]);
    for (int ch = 0; ch < 3; ++ch) img.px[i + ch] = clamp01(l + (img.px[i + ch] - l) * s);
  }

  if (f.hue_shift != 0.0) {
    const float shift = static_cast<float>(f.hue_shift);
    for (std::size_t i = 0; i < img.px.size(); i += 3) {
      float h, sat, val;
      rgb_to_hsv(img.px[i], img.px[i + 1], img.px[i + 2], h, sat, val);
      hsv_to_rgb(h + shift, sat, val, img.px[i], img.px[i + 1], img.px[i + 2]);
    }
  }
  return img;
}

/// 8-dof homography sending each dst[i] to src[i]; small Gaussian elimination.
inline std::array<double, 9> homography_from_corners(const std::array<std::array<double, 2>, 4>& dst,
                                                     const std::array<std::array<double, 2>, 4>& src) {
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double x = dst[i][0], y = dst[i][1], u = src[i][0], v = src[i][1];
    double r1[9] = {x, y, 1, 0, 0, 0, -u * x, -u * y, u};
    double r2[9] = {0, 0, 0, x, y, 1, -v * x, -v * y, v};
    std::copy(r1, r1 + 9, a[2 * i]);
    std::copy(r2, r2 + 9, a[2 * i + 1]);
  }
  for (int col = 0; col < 8; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    require(std::abs(a[pivot][col]) > 1e-12, "perspective: degenerate corner set");
    std::swap_ranges(a[col], a[col] + 9, a[pivot]);
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int k = col; k < 9; ++k) a[r][k] -= f * a[col][k];
    }
  }
  std::array<double, 9> h{};
  for (int i = 0; i < 8; ++i) h[i] = a[i][8] / a[i][i];
  h[8] = 1.0;
  return h;
}

/// Random perspective: each corner moves inward by up to distortion*dim/2.
/// Draw order: gate, then (x,y) offsets corner by corner, top-left first.
inline Image apply_perspective(const Image& src, double distortion, double p, Rng& rng) {
  if (!rng.bernoulli(p)) return src;
  const double dx = distortion * src.width / 2.0, dy = distortion * src.height / 2.0;
  const double w = src.width - 1, h = src.height - 1;
  std::array<std::array<double, 2>, 4> moved;
  moved[0] = {rng.uniform(0, dx), rng.uniform(0, dy)};              // top-left
  moved[1] = {w - rng.uniform(0, dx), rng.uniform(0, dy)};          // top-right
  moved[2] = {w - rng.uniform(0, dx), h - rng.uniform(0, dy)};      // bottom-right
  moved[3] = {rng.uniform(0, dx), h - rng.uniform(0, dy)};          // bottom-left
  const std::array<std::array<double, 2>, 4> corners = {{{0, 0}, {w, 0}, {w, h}, {0, h}}};
  const auto H = homography_from_corners(corners, moved);
  Image dst(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const double denom = H[6] * x + H[7] * y + H[8];
      const float sx = static_cast<float>((H[0] * x + H[1] * y + H[2]) / denom);
      const float sy = static_cast<float>((H[3] * x + H[4] * y + H[5]) / denom);
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = sample_bilinear_reflect(src, sy, sx, c);
    }
  return dst;
}

/// Random resized crop. Up to 10 window draws; a degenerate window (below one
/// pixel or larger than the image) is rejected. Fallback: centered square.
inline Image random_resized_crop(const Image& src, const AugmentationPolicy& p, int resolution,
                                 Rng& rng, bool* fell_back) {
  const double smin = p.param("scale_min"), smax = p.param("scale_max");
  const double rmin = p.param("ratio_min"), rmax = p.param("ratio_max");
  const double area = static_cast<double>(src.width) * src.height;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(smin, smax);
    const double ratio = std::exp(rng.uniform(std::log(rmin), std::log(rmax)));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w < 1 || h < 1 || w > src.width || h > src.height) continue;
    const int top = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(src.height - h + 1)));
    const int left = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(src.width - w + 1)));
    return resize_bilinear(crop(src, top, left, h, w), resolution, resolution);
  }
  if (fell_back) *fell_back = true;
  const int side = std::min(src.width, src.height);
  return resize_bilinear(center_crop(src, side, side), resolution, resolution);
}

namespace detail {

inline ApplyResult apply_one(const AugmentationPolicy& policy, const Image& input,
                             std::uint64_t seed, int resolution) {
  Rng rng(derive_seed(seed, to_string(policy.name)));
  ApplyResult out;
  if (policy.name == PolicyName::random_resized_crop) {
    out.image = random_resized_crop(input, policy, resolution, rng, &out.crop_fell_back_to_center);
    return out;
  }
  Image img = (input.height == resolution && input.width == resolution)
                  ? input
                  : resize_bilinear(input, resolution, resolution);
  switch (policy.name) {
    case PolicyName::baseline:
      break;
    case PolicyName::horizontal_flip:
      if (rng.bernoulli(policy.param("p"))) img = flip_horizontal(img);
      break;
    case PolicyName::vertical_flip:
      if (rng.bernoulli(policy.param("p"))) img = flip_vertical(img);
      break;
    case PolicyName::rotation_15: {
      const double deg = policy.param("degrees");
      img = rotate_bilinear(img, rng.uniform(-deg, deg));
      break;
    }
    case PolicyName::color_jitter: {
      const auto f = draw_jitter_factors(policy, rng);
      img = apply_jitter(img, f);
      break;
    }
    case PolicyName::gaussian_blur: {
      const int kernel = static_cast<int>(policy.param("kernel"));
      const double sigma = rng.uniform(policy.param("sigma_min"), policy.param("sigma_max"));
      img = gaussian_blur(img, kernel, sigma);
      break;
    }
    case PolicyName::grayscale:
      if (rng.bernoulli(policy.param("p"))) img = to_grayscale(img);
      break;
    case PolicyName::perspective:
      img = apply_perspective(img, policy.param("distortion"), policy.param("p"), rng);
      break;
    default:
      throw Error("apply_policy: unhandled policy " + to_string(policy.name));
  }
  out.image = std::move(img);
  return out;
}

}  // namespace detail

/// Applies one policy at a fixed seed. Output is resolution x resolution; the
/// same (policy, image, seed, resolution) always yields identical bytes.
inline ApplyResult apply_policy(const AugmentationPolicy& policy, const Image& input,
                                std::uint64_t seed, int resolution) {
  require(!input.empty(), "apply_policy: empty image");
  require(resolution > 0, "apply_policy: resolution must be positive");
  if (policy.name != PolicyName::all_combined) return detail::apply_one(policy, input, seed, resolution);

  ApplyResult out;
  out.image = input;
  std::uint64_t step_index = 0;
  for (const auto& step : combined_steps(policy)) {
    auto r = detail::apply_one(step, out.image, derive_seed(seed, "combined", step_index), resolution);
    out.image = std::move(r.image);
    out.crop_fell_back_to_center |= r.crop_fell_back_to_center;
    ++step_index;
  }
  return out;
}

}  // namespace stillact
