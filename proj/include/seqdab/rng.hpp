#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace seqdab {

// splitmix64 finalizer; decorrelates low-entropy seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Deterministic stream derivation: one base seed, named purpose, indices.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = mix64(base ^ hash_str(purpose));
  h = mix64(h ^ a);
  return mix64(h ^ (b + 0x9e3779b97f4a7c15ull));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t base, std::string_view purpose,
                    std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(derive_seed(base, purpose, a, b));
}

}  // namespace seqdab
