#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace icwlm {

// SplitMix64 finalizer; used to turn (seed, counter...) tuples into
// independent 64-bit stream keys.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t key = 0x6A09E667F3BCC909ULL;
  for (std::uint64_t p : parts) key = mix64(key ^ mix64(p));
  return key;
}

using Rng = std::mt19937_64;

// Random stream addressed by a counter tuple. Two calls with the same
// tuple yield identical streams, regardless of call order or thread.
inline Rng make_stream(std::initializer_list<std::uint64_t> parts) {
  return Rng(stream_key(parts));
}

}  // namespace icwlm
