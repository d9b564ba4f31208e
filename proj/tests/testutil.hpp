#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "stillact/core/image.hpp"
#include "stillact/core/rng.hpp"
#include "stillact/dataset/manifest.hpp"

namespace testutil {

/// Temporary directory removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("stillact_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path.string(); }
};

/// Noise image with a class-dependent structure so tiny models can learn:
/// class 0 puts a bright block top-left, class 1 center, class 2 bottom-right.
inline stillact::Image synthetic_image(int h, int w, int cls, std::uint64_t seed) {
  stillact::Rng rng(stillact::derive_seed(seed, "synthimg", static_cast<std::uint64_t>(cls)));
  stillact::Image img(h, w);
  for (auto& v : img.px) v = 0.2f + 0.1f * static_cast<float>(rng.uniform());
  const int bh = std::max(1, h / 3), bw = std::max(1, w / 3);
  const int oy = cls == 0 ? 0 : cls == 1 ? (h - bh) / 2 : h - bh;
  const int ox = cls == 0 ? 0 : cls == 1 ? (w - bw) / 2 : w - bw;
  for (int y = oy; y < oy + bh; ++y)
    for (int x = ox; x < ox + bw; ++x) {
      img.at(y, x, cls % 3) = 0.95f;
      img.at(y, x, (cls + 1) % 3) = 0.75f;
    }
  return img;
}

inline stillact::Image random_image(int h, int w, std::uint64_t seed) {
  stillact::Rng rng(seed);
  stillact::Image img(h, w);
  for (auto& v : img.px) v = static_cast<float>(rng.uniform());
  return img;
}

inline stillact::ImageRecord make_record(std::uint64_t id, int w, int h, stillact::Label label,
                                         const std::string& url_base = "http://127.0.0.1:1/img") {
  stillact::ImageRecord r;
  r.image_id = id;
  r.width = w;
  r.height = h;
  r.label = label;
  char name[32];
  std::snprintf(name, sizeof(name), "%012llu.png", static_cast<unsigned long long>(id));
  r.file_name = name;
  r.url = url_base + "/" + r.file_name;
  return r;
}

}  // namespace testutil
