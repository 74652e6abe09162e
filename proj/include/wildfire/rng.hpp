#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace wildfire {

/// SplitMix64 finalizer. Bijective 64-bit mixer used as the core of the
/// counter-based generator.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// FNV-1a over a string, for turning stream names into keys.
constexpr std::uint64_t name_key(std::string_view name) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Counter-based generator: the n-th draw is a pure function of
/// (key, n), so streams can be split, skipped and replayed without
/// carrying state between platforms.
class CounterRng {
 public:
  constexpr CounterRng() = default;
  constexpr explicit CounterRng(std::uint64_t key) : key_(mix64(key)) {}
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(mix64(mix64(seed) ^ mix64(stream + 0x632BE59BD9B4E019ULL))) {}
  CounterRng(std::uint64_t seed, std::string_view stream) : CounterRng(seed, name_key(stream)) {}

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

  /// Value at an absolute position without advancing.
  constexpr std::uint64_t at(std::uint64_t index) const noexcept {
    return mix64(key_ ^ mix64(index));
  }

  constexpr std::uint64_t next_u64() noexcept { return at(counter_++); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Multiply-shift reduction.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (one draw per call, two uniforms).
  double normal() noexcept {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t key_ = mix64(0);
  std::uint64_t counter_ = 0;
};

/// Uniform in [0,1) for a single (key, index) pair without a generator object.
inline double uniform_at(std::uint64_t key, std::uint64_t index) noexcept {
  return static_cast<double>(mix64(key ^ mix64(index)) >> 11) * 0x1.0p-53;
}

}  // namespace wildfire
