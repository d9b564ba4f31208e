#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/core/error.hpp"
#include "stillact/dataset/labels.hpp"

namespace stillact {

/// One curated image: identity, source location, pixel dimensions, activity.
struct ImageRecord {
  std::uint64_t image_id = 0;
  std::string url;
  std::string file_name;
  int width = 0;
  int height = 0;
  Label label = Label::walking_running;
};

/// The dataset contract: records in ascending image_id order plus per-class
/// counts. Ordering is fixed so statistics and splits are machine-stable.
struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::map<Label, std::size_t> class_counts;

  std::size_t size() const { return records.size(); }

  std::size_t count(Label l) const {
    auto it = class_counts.find(l);
    return it == class_counts.end() ? 0 : it->second;
  }
};

inline constexpr int kWidthMin = 300, kWidthMax = 640;
inline constexpr int kHeightMin = 240, kHeightMax = 640;

/// Validates raw annotation records and assembles the manifest: duplicate
/// ids are rejected with the offending id, dimensions must sit inside the
/// dataset's pixel ranges (label vocabulary is checked at parse time).
inline DatasetManifest build_manifest(std::vector<ImageRecord> source) {
  std::sort(source.begin(), source.end(),
            [](const ImageRecord& a, const ImageRecord& b) { return a.image_id < b.image_id; });
  DatasetManifest m;
  for (Label l : kAllLabels) m.class_counts[l] = 0;
  std::uint64_t prev_id = 0;
  bool first = true;
  for (auto& r : source) {
    if (!first && r.image_id == prev_id)
      throw Error("manifest: duplicate image_id " + std::to_string(r.image_id));
    if (r.width < kWidthMin || r.width > kWidthMax || r.height < kHeightMin ||
        r.height > kHeightMax)
      throw Error("manifest: image " + std::to_string(r.image_id) + " dimensions " +
                  std::to_string(r.width) + "x" + std::to_string(r.height) +
                  " outside the dataset ranges [300,640]x[240,640]");
    prev_id = r.image_id;
    first = false;
    m.class_counts[r.label]++;
    m.records.push_back(std::move(r));
  }
  return m;
}

inline nlohmann::json record_to_json(const ImageRecord& r) {
  return nlohmann::json{{"image_id", r.image_id}, {"url", r.url},       {"file_name", r.file_name},
                        {"width", r.width},       {"height", r.height}, {"label", to_string(r.label)}};
}

inline ImageRecord record_from_json(const nlohmann::json& j) {
  ImageRecord r;
  r.image_id = j.at("image_id").get<std::uint64_t>();
  r.url = j.at("url").get<std::string>();
  r.file_name = j.at("file_name").get<std::string>();
  r.width = j.at("width").get<int>();
  r.height = j.at("height").get<int>();
  const std::string label = j.at("label").get<std::string>();
  if (label.empty()) throw Error("manifest: record " + std::to_string(r.image_id) + " has empty label");
  r.label = label_from_string(label);
  return r;
}

/// Reads annotation records from a JSONL file (one object per line).
inline std::vector<ImageRecord> read_annotation_jsonl(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "manifest: cannot open " + path);
  std::vector<ImageRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error("manifest: " + path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// manifest.jsonl: one record per line, lines sorted by image_id.
inline void write_manifest_jsonl(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), "manifest: cannot open for write " + path);
  for (const auto& r : m.records) out << record_to_json(r).dump() << "\n";
  require(out.good(), "manifest: write failed " + path);
}

inline DatasetManifest read_manifest_jsonl(const std::string& path) {
  return build_manifest(read_annotation_jsonl(path));
}

}  // namespace stillact
