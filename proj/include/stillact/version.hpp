#pragma once

namespace stillact {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace stillact
