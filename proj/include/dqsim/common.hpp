#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace dqsim {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Usage/contract violations (bad arguments, malformed models or configs).
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

// Internal consistency failures (negative residuals, non-finite gradients).
struct InternalError : std::runtime_error {
  explicit InternalError(const std::string& what) : std::runtime_error(what) {}
};

// FNV-1a, used for config hashing and seed derivation.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Stable seed derivation: independent streams from (base, tag, index).
inline uint64_t derive_seed(uint64_t base, uint64_t tag, uint64_t index = 0) {
  uint64_t h = mix64(base ^ 0x6a09e667f3bcc908ull);
  h = mix64(h ^ tag);
  h = mix64(h ^ index);
  return h;
}

}  // namespace dqsim
