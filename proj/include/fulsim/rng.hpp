#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace fulsim {

/// SplitMix64 finalizer. Used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds any number of tags into a base seed.
template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t base, Tags... tags) noexcept {
  std::uint64_t s = mix64(base);
  ((s = mix64(s ^ static_cast<std::uint64_t>(tags))), ...);
  return s;
}

// Stream tags for derive_seed.
namespace seed_tag {
inline constexpr std::uint64_t kInit = 0x696e6974;      // "init"
inline constexpr std::uint64_t kShuffle = 0x73687566;   // "shuf"
inline constexpr std::uint64_t kLocal = 0x6c6f6361;     // "loca"
inline constexpr std::uint64_t kSample = 0x73616d70;    // "samp"
inline constexpr std::uint64_t kData = 0x64617461;      // "data"
inline constexpr std::uint64_t kPoison = 0x706f6973;    // "pois"
inline constexpr std::uint64_t kRecovery = 0x7265636f;  // "reco"
inline constexpr std::uint64_t kHoldout = 0x686f6c64;   // "hold"
}  // namespace seed_tag

/// Deterministic generator whose output is identical on every standard
/// library. std::*_distribution is implementation-defined, so the
/// conversions to uniform/normal/index are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (both outputs used).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [0, bound) (Lemire's nearly-divisionless method).
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) return 0;
    unsigned __int128 m = static_cast<unsigned __int128>(engine_()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(engine_()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fulsim
