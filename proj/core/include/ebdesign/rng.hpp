#pragma once

// Keyed random streams. A stream is fully determined by (seed, keys...), so
// replicate r always sees the same numbers no matter which thread runs it or
// in which order replicates are visited.

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ebdesign {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

using Engine = std::mt19937_64;

inline Engine stream_engine(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return Engine(stream_key(seed, keys));
}

// Uniform in [0, 1) from the top 53 bits; unlike generate_canonical this is
// the same on every standard library.
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection-free multiply-shift (n < 2^32).
inline std::uint64_t uniform_index(Engine& eng, std::uint64_t n) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(eng()) * n) >> 64);
}

}  // namespace ebdesign
