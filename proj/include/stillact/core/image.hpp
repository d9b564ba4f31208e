#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "stillact/core/error.hpp"
#include "stillact/core/tensor.hpp"

namespace stillact {

/// RGB raster, float32 in [0,1], HWC layout. All geometric transforms in the
/// project run on this type with our own samplers so outputs stay bit-stable.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> px;  // height*width*3

  Image() = default;
  Image(int h, int w, float fill = 0.f) : height(h), width(w), px(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) { return px[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return px[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool empty() const { return px.empty(); }
};

inline Image image_from_mat(const cv::Mat& bgr) {
  require(!bgr.empty(), "image: empty matrix");
  cv::Mat m;
  if (bgr.channels() == 1) {
    cv::Mat tmp;
    cv::merge(std::vector<cv::Mat>{bgr, bgr, bgr}, tmp);
    m = tmp;
  } else if (bgr.channels() == 4) {
    std::vector<cv::Mat> ch;
    cv::split(bgr, ch);
    cv::merge(std::vector<cv::Mat>{ch[0], ch[1], ch[2]}, m);
  } else {
    m = bgr;
  }
  Image img(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      img.at(y, x, 0) = row[x][2] / 255.f;  // BGR -> RGB
      img.at(y, x, 1) = row[x][1] / 255.f;
      img.at(y, x, 2) = row[x][0] / 255.f;
    }
  }
  return img;
}

inline cv::Mat image_to_mat(const Image& img) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      auto q = [&](int c) {
        const float v = std::clamp(img.at(y, x, c), 0.f, 1.f);
        return static_cast<std::uint8_t>(std::lround(v * 255.f));
      };
      row[x][0] = q(2);
      row[x][1] = q(1);
      row[x][2] = q(0);
    }
  }
  return m;
}

inline std::optional<Image> decode_image_file(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) return std::nullopt;
  return image_from_mat(m);
}

inline std::optional<Image> decode_image_bytes(const std::vector<std::uint8_t>& bytes) {
  if (bytes.empty()) return std::nullopt;
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat m = cv::imdecode(raw, cv::IMREAD_COLOR);
  if (m.empty()) return std::nullopt;
  return image_from_mat(m);
}

inline std::vector<std::uint8_t> encode_image(const Image& img, const std::string& ext) {
  std::vector<std::uint8_t> buf;
  require(cv::imencode(ext, image_to_mat(img), buf), "image: encode failed for " + ext);
  return buf;
}

inline void write_image(const Image& img, const std::string& path) {
  require(cv::imwrite(path, image_to_mat(img)), "image: write failed: " + path);
}

/// Bilinear sample with edge clamping at half-pixel aligned coordinates.
inline float sample_bilinear(const Image& img, float y, float x, int c) {
  const float fx = std::clamp(x, 0.f, static_cast<float>(img.width - 1));
  const float fy = std::clamp(y, 0.f, static_cast<float>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const float ax = fx - x0;
  const float ay = fy - y0;
  const float top = img.at(y0, x0, c) * (1.f - ax) + img.at(y0, x1, c) * ax;
  const float bot = img.at(y1, x0, c) * (1.f - ax) + img.at(y1, x1, c) * ax;
  return top * (1.f - ay) + bot * ay;
}

/// Reflection padding (border pixels not repeated), then bilinear sampling.
inline float sample_bilinear_reflect(const Image& img, float y, float x, int c) {
  auto reflect = [](float v, int n) {
    if (n == 1) return 0.f;
    const float period = 2.f * (n - 1);
    float t = std::fmod(v, period);
    if (t < 0) t += period;
    return t <= (n - 1) ? t : period - t;
  };
  return sample_bilinear(img, reflect(y, img.height), reflect(x, img.width), c);
}

inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0 && !src.empty(), "resize: bad arguments");
  Image dst(out_h, out_w);
  const float sy = static_cast<float>(src.height) / out_h;
  const float sx = static_cast<float>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const float src_y = (y + 0.5f) * sy - 0.5f;
    for (int x = 0; x < out_w; ++x) {
      const float src_x = (x + 0.5f) * sx - 0.5f;
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = sample_bilinear(src, src_y, src_x, c);
    }
  }
  return dst;
}

inline Image crop(const Image& src, int top, int left, int h, int w) {
  require(top >= 0 && left >= 0 && top + h <= src.height && left + w <= src.width && h > 0 && w > 0,
          "crop: window out of bounds");
  Image dst(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = src.at(top + y, left + x, c);
  return dst;
}

inline Image center_crop(const Image& src, int h, int w) {
  const int top = std::max(0, (src.height - h) / 2);
  const int left = std::max(0, (src.width - w) / 2);
  return crop(src, top, left, std::min(h, src.height), std::min(w, src.width));
}

/// CHW tensor with per-channel normalization: (v - mean[c]) / std[c].
template <typename T>
Tensor<T> image_to_chw(const Image& img, const std::array<T, 3>& mean, const std::array<T, 3>& stddev) {
  Tensor<T> t({3, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t.at(c, y, x) = (static_cast<T>(img.at(y, x, c)) - mean[c]) / stddev[c];
  return t;
}

inline std::array<double, 3> channel_means(const Image& img) {
  std::array<double, 3> sum{0, 0, 0};
  for (std::size_t i = 0; i < img.px.size(); i += 3)
    for (int c = 0; c < 3; ++c) sum[c] += img.px[i + c];
  const double n = img.px.size() / 3.0;
  for (auto& s : sum) s /= std::max(1.0, n);
  return sum;
}

}  // namespace stillact
