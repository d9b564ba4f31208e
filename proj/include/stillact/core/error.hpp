#pragma once

#include <stdexcept>
#include <string>

namespace stillact {

/// Library-wide exception type. Every failure that callers are expected to
/// handle is reported as an Error with a human-readable message.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace stillact
