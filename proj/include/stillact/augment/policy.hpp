#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/core/error.hpp"

namespace stillact {

/// The ten augmentation strategies evaluated by the sweep.
enum class PolicyName {
  baseline,
  horizontal_flip,
  vertical_flip,
  rotation_15,
  color_jitter,
  gaussian_blur,
  grayscale,
  random_resized_crop,
  perspective,
  all_combined,
};

inline const std::vector<std::pair<PolicyName, std::string>>& policy_names() {
  static const std::vector<std::pair<PolicyName, std::string>> names = {
      {PolicyName::baseline, "baseline"},
      {PolicyName::horizontal_flip, "horizontal_flip"},
      {PolicyName::vertical_flip, "vertical_flip"},
      {PolicyName::rotation_15, "rotation_15"},
      {PolicyName::color_jitter, "color_jitter"},
      {PolicyName::gaussian_blur, "gaussian_blur"},
      {PolicyName::grayscale, "grayscale"},
      {PolicyName::random_resized_crop, "random_resized_crop"},
      {PolicyName::perspective, "perspective"},
      {PolicyName::all_combined, "all_combined"},
  };
  return names;
}

inline std::string to_string(PolicyName p) {
  for (const auto& [name, s] : policy_names())
    if (name == p) return s;
  throw Error("policy: invalid enum value");
}

inline PolicyName policy_from_string(const std::string& s) {
  std::string valid;
  for (const auto& [name, n] : policy_names()) {
    if (n == s) return name;
    valid += (valid.empty() ? "" : ", ") + n;
  }
  throw Error("policy: unknown name '" + s + "' (valid: " + valid + ")");
}

/// A named transform plus its scalar parameters. Parameters are exposed so a
/// run is fully described by its serialized policies.
struct AugmentationPolicy {
  PolicyName name = PolicyName::baseline;
  std::map<std::string, double> parameters;

  double param(const std::string& key) const {
    auto it = parameters.find(key);
    require(it != parameters.end(), "policy " + to_string(name) + ": missing parameter " + key);
    return it->second;
  }
};

/// Fully parameterized policy with the documented defaults.
inline AugmentationPolicy make_policy(PolicyName name) {
  AugmentationPolicy p;
  p.name = name;
  switch (name) {
    case PolicyName::baseline:
      break;
    case PolicyName::horizontal_flip:
    case PolicyName::vertical_flip:
      p.parameters = {{"p", 0.5}};
      break;
    case PolicyName::rotation_15:
      p.parameters = {{"degrees", 15.0}};
      break;
    case PolicyName::color_jitter:
      p.parameters = {{"brightness", 0.4}, {"contrast", 0.4}, {"saturation", 0.4}, {"hue", 0.1}};
      break;
    case PolicyName::gaussian_blur:
      p.parameters = {{"kernel", 3.0}, {"sigma_min", 0.1}, {"sigma_max", 2.0}};
      break;
    case PolicyName::grayscale:
      p.parameters = {{"p", 1.0}};
      break;
    case PolicyName::random_resized_crop:
      p.parameters = {{"scale_min", 0.6}, {"scale_max", 1.0}, {"ratio_min", 0.75}, {"ratio_max", 4.0 / 3.0}};
      break;
    case PolicyName::perspective:
      p.parameters = {{"distortion", 0.5}, {"p", 0.5}};
      break;
    case PolicyName::all_combined:
      p.parameters = {{"crop_scale_min", 0.6}, {"crop_scale_max", 1.0},
                      {"crop_ratio_min", 0.75}, {"crop_ratio_max", 4.0 / 3.0},
                      {"perspective_distortion", 0.5}, {"perspective_p", 0.5},
                      {"vflip_p", 0.5},
                      {"brightness", 0.4}, {"contrast", 0.4}, {"saturation", 0.4}, {"hue", 0.1},
                      {"blur_kernel", 3.0}, {"blur_sigma_min", 0.1}, {"blur_sigma_max", 2.0}};
      break;
  }
  return p;
}

inline AugmentationPolicy make_policy(const std::string& name) {
  return make_policy(policy_from_string(name));
}

/// The composition behind all_combined, geometric steps before photometric:
/// crop -> perspective -> vertical flip -> jitter -> blur. Applying these in
/// order with per-step sub-seeds reproduces the combined policy exactly.
inline std::vector<AugmentationPolicy> combined_steps(const AugmentationPolicy& combined) {
  require(combined.name == PolicyName::all_combined, "combined_steps: not all_combined");
  auto crop = make_policy(PolicyName::random_resized_crop);
  crop.parameters = {{"scale_min", combined.param("crop_scale_min")},
                     {"scale_max", combined.param("crop_scale_max")},
                     {"ratio_min", combined.param("crop_ratio_min")},
                     {"ratio_max", combined.param("crop_ratio_max")}};
  auto persp = make_policy(PolicyName::perspective);
  persp.parameters = {{"distortion", combined.param("perspective_distortion")},
                      {"p", combined.param("perspective_p")}};
  auto vflip = make_policy(PolicyName::vertical_flip);
  vflip.parameters = {{"p", combined.param("vflip_p")}};
  auto jitter = make_policy(PolicyName::color_jitter);
  jitter.parameters = {{"brightness", combined.param("brightness")},
                       {"contrast", combined.param("contrast")},
                       {"saturation", combined.param("saturation")},
                       {"hue", combined.param("hue")}};
  auto blur = make_policy(PolicyName::gaussian_blur);
  blur.parameters = {{"kernel", combined.param("blur_kernel")},
                     {"sigma_min", combined.param("blur_sigma_min")},
                     {"sigma_max", combined.param("blur_sigma_max")}};
  return {crop, persp, vflip, jitter, blur};
}

inline nlohmann::json policy_to_json(const AugmentationPolicy& p) {
  return nlohmann::json{{"name", to_string(p.name)}, {"parameters", p.parameters}};
}

inline AugmentationPolicy policy_from_json(const nlohmann::json& j) {
  AugmentationPolicy p = make_policy(j.at("name").get<std::string>());
  if (j.contains("parameters"))
    for (const auto& [k, v] : j.at("parameters").items()) p.parameters[k] = v.get<double>();
  return p;
}

}  // namespace stillact
