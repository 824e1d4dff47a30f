#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace f2l {

// splitmix64 finalizer; decorrelates nearby seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic seed for a named sub-stream of a root seed. Every component
// draws from its own stream, so skipping one component never shifts another.
inline std::uint64_t substream(std::uint64_t root, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL ^ mix64(root);
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return mix64(h);
}

inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view name) {
  return std::mt19937_64(substream(root, name));
}

}  // namespace f2l
