#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "stillact/core/error.hpp"
#include "stillact/core/image.hpp"
#include "stillact/dataset/manifest.hpp"

namespace stillact {

enum class FetchStatus { cached, downloaded, failed };

inline std::string to_string(FetchStatus s) {
  switch (s) {
    case FetchStatus::cached: return "cached";
    case FetchStatus::downloaded: return "downloaded";
    case FetchStatus::failed: return "failed";
  }
  return "?";
}

struct ImageIntegrity {
  std::uint64_t image_id = 0;
  FetchStatus status = FetchStatus::failed;
  int decoded_width = 0;
  int decoded_height = 0;
  std::string detail;  // failure reason, empty on success
};

struct IntegrityReport {
  std::vector<ImageIntegrity> images;  // manifest order (ascending image_id)
  std::size_t cached = 0, downloaded = 0, failed = 0;

  bool all_ok() const { return failed == 0; }
};

struct DownloadOptions {
  int parallelism = 8;
  bool offline = false;          // never touch the network
  int timeout_seconds = 30;
};

namespace detail {

struct ParsedUrl {
  std::string scheme_host;  // e.g. "http://images.example.org"
  std::string path;         // e.g. "/val2017/000000001234.jpg"
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  require(scheme_end != std::string::npos, "download: malformed url " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl p;
  if (path_start == std::string::npos) {
    p.scheme_host = url;
    p.path = "/";
  } else {
    p.scheme_host = url.substr(0, path_start);
    p.path = url.substr(path_start);
  }
  return p;
}

inline std::string cache_file_name(const ImageRecord& r) {
  std::string ext = ".jpg";
  const auto dot = r.file_name.rfind('.');
  if (dot != std::string::npos) ext = r.file_name.substr(dot);
  return std::to_string(r.image_id) + ext;
}

inline bool fetch_to_file(const std::string& url, const std::filesystem::path& dest,
                          int timeout_seconds, std::string& error) {
  try {
    const ParsedUrl p = parse_url(url);
    httplib::Client client(p.scheme_host);
    client.set_connection_timeout(timeout_seconds);
    client.set_read_timeout(timeout_seconds);
    client.set_follow_location(true);
    auto res = client.Get(p.path);
    if (!res) {
      error = "fetch error: " + httplib::to_string(res.error());
      return false;
    }
    if (res->status != 200) {
      error = "http status " + std::to_string(res->status);
      return false;
    }
    const auto tmp = dest.string() + ".part";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out.write(res->body.data(), static_cast<std::streamsize>(res->body.size()));
      if (!out.good()) {
        error = "write failed: " + tmp;
        return false;
      }
    }
    std::filesystem::rename(tmp, dest);
    return true;
  } catch (const std::exception& e) {
    error = e.what();
    return false;
  }
}

}  // namespace detail

inline std::filesystem::path cached_image_path(const ImageRecord& r,
                                               const std::filesystem::path& cache_dir) {
  return cache_dir / detail::cache_file_name(r);
}

/// Ensures every manifest image is present and intact in cache_dir.
/// Per-image outcome, never aborts on individual failures. A cached file only
/// counts when it decodes and its decoded dimensions equal the manifest entry;
/// mismatches are reported as integrity violations, never dropped silently.
/// Fetches run on up to opts.parallelism worker threads; the report is
/// identical to serial execution (slot-indexed results, manifest order).
inline IntegrityReport download_images(const DatasetManifest& manifest,
                                       const std::filesystem::path& cache_dir,
                                       const DownloadOptions& opts = {}) {
  std::filesystem::create_directories(cache_dir);
  IntegrityReport report;
  report.images.resize(manifest.records.size());

  auto process = [&](std::size_t idx) {
    const ImageRecord& rec = manifest.records[idx];
    ImageIntegrity out;
    out.image_id = rec.image_id;
    const auto path = cached_image_path(rec, cache_dir);

    auto verify = [&](FetchStatus ok_status) {
      const auto img = decode_image_file(path.string());
      if (!img) {
        out.status = FetchStatus::failed;
        out.detail = "undecodable file in cache: " + path.filename().string();
        return;
      }
      out.decoded_width = img->width;
      out.decoded_height = img->height;
      if (img->width != rec.width || img->height != rec.height) {
        out.status = FetchStatus::failed;
        out.detail = "integrity violation for image_id " + std::to_string(rec.image_id) +
                     ": decoded " + std::to_string(img->width) + "x" + std::to_string(img->height) +
                     " != manifest " + std::to_string(rec.width) + "x" + std::to_string(rec.height);
        return;
      }
      out.status = ok_status;
    };

    if (std::filesystem::exists(path)) {
      verify(FetchStatus::cached);
    } else if (opts.offline) {
      out.status = FetchStatus::failed;
      out.detail = "not cached and offline mode is on";
    } else {
      std::string err;
      if (detail::fetch_to_file(rec.url, path, opts.timeout_seconds, err)) {
        verify(FetchStatus::downloaded);
      } else {
        out.status = FetchStatus::failed;
        out.detail = err;
      }
    }
    report.images[idx] = out;
  };

  const int workers = std::max(1, std::min<int>(opts.parallelism,
                                                static_cast<int>(manifest.records.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < manifest.records.size(); ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= manifest.records.size()) return;
          process(i);
        }
      });
    for (auto& t : pool) t.join();
  }

  for (const auto& img : report.images) {
    if (img.status == FetchStatus::cached) ++report.cached;
    if (img.status == FetchStatus::downloaded) ++report.downloaded;
    if (img.status == FetchStatus::failed) ++report.failed;
  }
  return report;
}

inline nlohmann::json integrity_to_json(const IntegrityReport& r) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& i : r.images)
    images.push_back({{"image_id", i.image_id},
                      {"status", to_string(i.status)},
                      {"decoded_width", i.decoded_width},
                      {"decoded_height", i.decoded_height},
                      {"detail", i.detail}});
  return nlohmann::json{
      {"cached", r.cached}, {"downloaded", r.downloaded}, {"failed", r.failed}, {"images", images}};
}

}  // namespace stillact
