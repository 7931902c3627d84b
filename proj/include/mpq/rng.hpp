#pragma once

#include <cstdint>
#include <random>

namespace mpq {

// splitmix64 finalizer; used to derive independent streams from (seed, index)
// so parallel units produce the same numbers regardless of scheduling.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream + 0x165667b19e3779f9ULL));
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream = 0) {
  return std::mt19937_64(derive_seed(seed, stream));
}

// deterministic hash to [-1, 1]; for fixed per-key offsets drawn once from a seed
inline double unit_hash(uint64_t seed, uint64_t a, uint64_t b) {
  uint64_t h = derive_seed(seed, a, b);
  return static_cast<double>(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

inline double uniform_pm_half(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
}

}  // namespace mpq
