#pragma once

// Shared low-level utilities: deterministic hashing, seed derivation and
// uniform draws. Everything here must behave identically across runs on the
// same platform; reproducibility of trajectory logs depends on it.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace t2po {

// 64-bit FNV-1a. Used for state-key feature hashing and task fingerprints;
// std::hash is implementation-defined, so we roll our own.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives a child seed from a parent seed and a list of stream labels.
// Each (label) pair gets its own statistically independent stream; TDS
// regeneration attempts use a fresh label so rejected candidates never
// replay the same randomness.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> labels) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t v : labels) h = splitmix64(h ^ splitmix64(v));
  return h;
}

// Seeded uniform stream. The [0,1) mapping is done by hand (53-bit mantissa)
// so draws do not depend on the standard library's distribution internals.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::below: n must be > 0");
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace t2po
