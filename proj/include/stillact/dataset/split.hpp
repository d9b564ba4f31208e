#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/core/error.hpp"
#include "stillact/core/rng.hpp"
#include "stillact/dataset/manifest.hpp"

namespace stillact {

enum class Split { train = 0, val = 1, test = 2 };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw Error("split: invalid enum value");
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error("split: unknown value '" + s + "'");
}

struct SplitAssignment {
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  std::string generator_name = kGeneratorName;
  std::map<std::uint64_t, Split> membership;
  std::vector<std::string> warnings;

  std::size_t count(Split s) const {
    std::size_t n = 0;
    for (const auto& [id, sp] : membership)
      if (sp == s) ++n;
    return n;
  }
};

/// Integer apportionment of n into three quotas n*ratios: floor quotas first,
/// leftovers to the largest fractional remainders, ties resolved in
/// train > val > test priority order.
inline std::array<std::size_t, 3> largest_remainder_alloc(std::size_t n,
                                                          const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> alloc{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double quota = static_cast<double>(n) * ratios[k];
    alloc[k] = static_cast<std::size_t>(std::floor(quota));
    remainder[k] = quota - std::floor(quota);
    assigned += alloc[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (std::size_t leftover = n - assigned, i = 0; leftover > 0; --leftover, ++i)
    alloc[order[i % 3]]++;
  return alloc;
}

/// Deterministic stratified split. Within each class, ids are sorted
/// ascending, shuffled by a class-keyed generator derived from the seed, and
/// assigned train/val/test counts by largest-remainder allocation.
inline SplitAssignment stratified_split(const DatasetManifest& manifest,
                                        const std::array<double, 3>& ratios,
                                        std::uint64_t seed) {
  for (double r : ratios) require(r > 0.0, "split: ratios must be positive");
  const double sum = ratios[0] + ratios[1] + ratios[2];
  require(std::abs(sum - 1.0) <= 1e-9, "split: ratios must sum to 1, got " + std::to_string(sum));
  require(!manifest.records.empty(), "split: empty manifest");

  std::map<Label, std::vector<std::uint64_t>> ids_by_class;
  for (const auto& r : manifest.records) ids_by_class[r.label].push_back(r.image_id);

  SplitAssignment out;
  out.seed = seed;
  out.ratios = ratios;
  for (auto& [label, ids] : ids_by_class) {
    require(!ids.empty(), "split: class " + to_string(label) + " has no images");
    if (ids.size() < 3)
      out.warnings.push_back("class " + to_string(label) + " has fewer images (" +
                             std::to_string(ids.size()) + ") than splits");
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, "stratified_split", to_string(label)));
    rng.shuffle(ids);
    const auto alloc = largest_remainder_alloc(ids.size(), ratios);
    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k)
      for (std::size_t i = 0; i < alloc[k]; ++i) out.membership[ids[pos++]] = static_cast<Split>(k);
  }
  return out;
}

inline nlohmann::json split_to_json(const SplitAssignment& s) {
  nlohmann::json membership = nlohmann::json::object();
  for (const auto& [id, sp] : s.membership) membership[std::to_string(id)] = to_string(sp);
  return nlohmann::json{{"seed", s.seed},
                        {"ratios", s.ratios},
                        {"generator_name", s.generator_name},
                        {"membership", membership}};
}

inline SplitAssignment split_from_json(const nlohmann::json& j) {
  SplitAssignment s;
  s.seed = j.at("seed").get<std::uint64_t>();
  const auto r = j.at("ratios").get<std::vector<double>>();
  require(r.size() == 3, "split: ratios must have 3 entries");
  s.ratios = {r[0], r[1], r[2]};
  s.generator_name = j.at("generator_name").get<std::string>();
  for (const auto& [key, val] : j.at("membership").items())
    s.membership[std::stoull(key)] = split_from_string(val.get<std::string>());
  return s;
}

inline void write_splits_json(const SplitAssignment& s, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), "split: cannot open for write " + path);
  out << split_to_json(s).dump(2) << "\n";
  require(out.good(), "split: write failed " + path);
}

inline SplitAssignment read_splits_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "split: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return split_from_json(j);
}

/// Ids of one split, ascending. The manifest argument pins the id universe:
/// membership must cover exactly the manifest ids.
inline std::vector<std::uint64_t> split_ids(const SplitAssignment& s, const DatasetManifest& m,
                                            Split which) {
  std::vector<std::uint64_t> out;
  for (const auto& r : m.records) {
    auto it = s.membership.find(r.image_id);
    require(it != s.membership.end(),
            "split: manifest image " + std::to_string(r.image_id) + " missing from membership");
    if (it->second == which) out.push_back(r.image_id);
  }
  return out;
}

}  // namespace stillact
