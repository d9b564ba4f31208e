#pragma once

#include <array>
#include <string>
#include <vector>

#include "stillact/core/error.hpp"

namespace stillact {

/// The three activity classes, in canonical reporting order.
enum class Label { walking_running = 0, sitting = 1, standing = 2 };

inline constexpr std::array<Label, 3> kAllLabels = {Label::walking_running, Label::sitting,
                                                    Label::standing};

inline std::string to_string(Label l) {
  switch (l) {
    case Label::walking_running: return "walking_running";
    case Label::sitting: return "sitting";
    case Label::standing: return "standing";
  }
  throw Error("label: invalid enum value");
}

inline Label label_from_string(const std::string& s) {
  if (s == "walking_running") return Label::walking_running;
  if (s == "sitting") return Label::sitting;
  if (s == "standing") return Label::standing;
  throw Error("label: unknown value '" + s + "' (expected walking_running|sitting|standing)");
}

inline std::vector<std::string> canonical_class_order() {
  std::vector<std::string> out;
  for (Label l : kAllLabels) out.push_back(to_string(l));
  return out;
}

}  // namespace stillact
