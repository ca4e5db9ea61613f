#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

namespace esdrl {

// SplitMix64 generator. Every random stream in the library is built on it so
// that results do not depend on the standard library's distribution code.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1].
  double uniform_open_zero() noexcept { return 1.0 - uniform(); }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x = (*this)();
    while (x >= limit) x = (*this)();
    return x % n;
  }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

// One-shot SplitMix64 mix of a single value.
inline std::uint64_t mix64(std::uint64_t x) noexcept { return SplitMix64(x)(); }

// Combine a base seed with a stream tag and index into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index = 0) noexcept {
  return mix64(mix64(base ^ tag) + index);
}

// Standard normal vector of length d, reconstructible from (seed, d) alone.
// Uniforms come from a SplitMix64 stream mapped onto (0, 1]; consecutive
// pairs go through Box-Muller. For odd d the final sine output is dropped.
inline std::vector<double> derive_noise(std::uint64_t seed, std::size_t d) {
  std::vector<double> out(d);
  SplitMix64 stream(seed);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::size_t i = 0;
  while (i < d) {
    const double u1 = stream.uniform_open_zero();
    const double u2 = stream.uniform_open_zero();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    out[i++] = radius * std::cos(two_pi * u2);
    if (i < d) out[i++] = radius * std::sin(two_pi * u2);
  }
  return out;
}

// 64-bit FNV-1a over raw bytes; used for parameter and noise checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t size,
                           std::uint64_t hash = 0xCBF29CE484222325ULL) noexcept {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

// Checksum of a double vector over its little-endian IEEE-754 encoding.
inline std::uint64_t checksum(const std::vector<double>& values) noexcept {
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char le[8];
    for (int b = 0; b < 8; ++b) le[b] = static_cast<unsigned char>(bits >> (8 * b));
    hash = fnv1a(le, 8, hash);
  }
  return hash;
}

}  // namespace esdrl
