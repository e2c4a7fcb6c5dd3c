#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace eer {

// Every random choice in the library is drawn from a named sub-stream of one
// master seed, so runs are reproducible and adding a consumer never shifts
// the draws of another.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct RngHub {
  std::uint64_t seed = 0;

  std::mt19937_64 stream(std::string_view name) const {
    return std::mt19937_64(mix64(seed ^ fnv1a64(name)));
  }
  std::mt19937_64 stream(std::string_view name, std::uint64_t k) const {
    return std::mt19937_64(mix64(mix64(seed ^ fnv1a64(name)) + k));
  }
};

}  // namespace eer
