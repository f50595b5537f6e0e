#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mpref::rng {

/// Unbiased draw in [0, n); uses the raw mt19937_64 stream so results do not
/// depend on the standard library's distribution implementations.
inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t n) {
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t r = gen();
    if (r >= threshold) return r % n;
  }
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Independent stream for (seed, iteration, purpose) triples.
inline std::uint64_t derive_seed(std::uint64_t seed, int iteration, std::string_view purpose) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(iteration) + 1) ^ fnv1a(purpose));
}

}  // namespace mpref::rng
