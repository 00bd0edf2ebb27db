#pragma once

#include <cstdint>
#include <random>

namespace mpcs {

// SplitMix64 output function. Used both to warm up engine seeds and to
// derive independent named streams from a single master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed for stream `stream` of `master`. derive_seed(m, a) and
// derive_seed(m, b) are decorrelated for a != b, so per-trial streams can be
// consumed in any order (or in parallel) without affecting each other.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(splitmix64(seed));
}

}  // namespace mpcs
