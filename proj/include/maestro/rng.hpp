#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace maestro {

// Deterministic PRNG built on splitmix64. The standard engines/distributions
// are avoided on purpose: their streams are implementation-defined for
// floating point draws, and reproducibility across runs is a contract here.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_bytes(std::string_view bytes,
                                std::uint64_t seed = 0xCBF29CE484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;  // FNV-1a prime
  }
  // Final avalanche so short strings spread over the whole word.
  std::uint64_t s = h;
  return splitmix64_next(s);
}

inline std::uint64_t combine_keys(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x8C72E7E3u;
  for (std::uint64_t p : parts) {
    std::uint64_t s = h ^ p;
    h = splitmix64_next(s);
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  /// Uniform double in [0, 1), 53 bits of entropy.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased and platform-stable.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  bool next_bool() { return (next_u64() & 1u) != 0; }

  /// Bernoulli draw with success probability p.
  bool next_bernoulli(double p) { return next_unit() < p; }

 private:
  std::uint64_t state_;
};

/// RNG keyed by a tuple of identifiers, independent of call order elsewhere.
inline Rng keyed_rng(std::initializer_list<std::uint64_t> parts) {
  return Rng(combine_keys(parts));
}

}  // namespace maestro
