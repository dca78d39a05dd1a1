#pragma once

#include <cstdint>
#include <random>

namespace foviq {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed-splitting contract: (root seed, index) -> child seed. Stable across
/// runs and platforms, independent of the order children are consumed in.
constexpr std::uint64_t child_seed(std::uint64_t root, std::uint64_t index) {
  return mix64(mix64(root) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t root, std::uint64_t index) { return Rng(child_seed(root, index)); }

}  // namespace foviq
