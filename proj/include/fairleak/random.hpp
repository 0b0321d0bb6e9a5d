#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fairleak {

// splitmix64 finalizer; used to turn (seed, label, index) into an
// independent stream seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_label(std::string_view label) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives a child seed from a master seed, a stream label and an index.
// Distinct labels or indices give statistically independent streams, so
// parallel tasks can each own a generator without coordination.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t index = 0) {
  return mix64(master ^ mix64(hash_label(label)) ^ mix64(index * 0x9e3779b97f4a7c15ULL + 1));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, std::string_view label,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(master, label, index));
}

}  // namespace fairleak
