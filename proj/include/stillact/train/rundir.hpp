#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "stillact/core/error.hpp"
#include "stillact/core/filelock.hpp"
#include "stillact/core/rng.hpp"
#include "stillact/version.hpp"

// Run persistence layout:
//   <run_dir>/<experiment>/experiment.json            index of all runs
//   <run_dir>/<experiment>/<family>/<repeat>/config.json
//                                            trainlog.json
//                                            metrics.json
//                                            checkpoint.ntc/.json
// Every artifact embeds {config_hash, seed, code_version}.

namespace stillact {

/// Order-independent digest of a config document (canonical dump of the
/// sorted-key json, fnv1a64, hex).
inline std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(config.dump())));
  return buf;
}

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;

  nlohmann::json stamp(nlohmann::json j) const {
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["code_version"] = kVersion;
    return j;
  }
};

inline void write_json_artifact(const nlohmann::json& j, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), "rundir: cannot write " + path.string());
  out << j.dump(2) << "\n";
  require(out.good(), "rundir: write failed " + path.string());
}

inline nlohmann::json read_json_artifact(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "missing artifact: " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

struct RunPaths {
  std::filesystem::path experiment_dir;

  std::filesystem::path index() const { return experiment_dir / "experiment.json"; }
  std::filesystem::path family_dir(const std::string& family) const {
    return experiment_dir / family;
  }
  std::filesystem::path repeat_dir(const std::string& family, std::size_t repeat) const {
    return experiment_dir / family / std::to_string(repeat);
  }
};

/// Inserts or replaces one run entry in the experiment index, guarded by a
/// lock file against concurrent CLI invocations.
inline void update_experiment_index(const RunPaths& paths, const nlohmann::json& entry) {
  std::filesystem::create_directories(paths.experiment_dir);
  FileLock lock((paths.experiment_dir / ".index.lock").string());
  nlohmann::json index;
  if (std::filesystem::exists(paths.index())) index = read_json_artifact(paths.index());
  if (!index.contains("runs")) index["runs"] = nlohmann::json::array();
  auto& runs = index["runs"];
  for (auto it = runs.begin(); it != runs.end();) {
    if ((*it).value("family", "") == entry.value("family", "") &&
        (*it).value("kind", "") == entry.value("kind", ""))
      it = runs.erase(it);
    else
      ++it;
  }
  runs.push_back(entry);
  write_json_artifact(index, paths.index());
}

}  // namespace stillact
