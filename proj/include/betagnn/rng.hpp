#pragma once

#include <cstdint>
#include <random>

namespace betagnn {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Order-sensitive hash of a seed and a stream tag. Used to derive
/// independent sub-seeds (per seed index, per layer, per epoch).
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ (tag + 0x632be59bd9b4e019ULL));
}

inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

/// Uniform double in [0, 1) from a counter, without any generator state.
inline constexpr double counter_uniform(std::uint64_t stream, std::uint64_t counter) {
  return static_cast<double>(splitmix64(stream ^ splitmix64(counter)) >> 11) * 0x1.0p-53;
}

using Rng = std::mt19937_64;

}  // namespace betagnn
