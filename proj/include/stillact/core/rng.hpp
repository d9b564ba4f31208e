#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

// Randomness layer. Every stochastic draw in the project flows through this
// file so that results are a pure function of the recorded seeds:
//   - generator: std::mt19937_64 (fully specified by the C++ standard)
//   - seed derivation: splitmix64 mixing chain
//   - shuffles: our own Fisher-Yates with an unbiased bounded draw
//   - real draws: hand-rolled mappings (std::*_distribution is not portable)

namespace stillact {

inline constexpr const char* kGeneratorName = "mt19937_64";

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Folds one more component into a derived seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t part) {
  return splitmix64(seed ^ splitmix64(part));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view part) {
  return mix_seed(seed, fnv1a64(part));
}

template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t base, Parts... parts) {
  std::uint64_t s = splitmix64(base);
  ((s = mix_seed(s, parts)), ...);
  return s;
}

class Rng {
 public:
  Rng() : engine_(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Unbiased draw in [0, n) via rejection sampling.
  std::uint64_t bounded(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = engine_();
      if (r >= threshold) return r % n;
    }
  }

  /// Uniform in [0, 1) with 53 bits of randomness.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::uint64_t i = v.size() - 1; i > 0; --i) {
      const std::uint64_t j = bounded(i + 1);
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace stillact
