#pragma once

#include <cstdint>
#include <initializer_list>

namespace geogcn {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic child seed from a base seed and a path of stream identifiers.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> stream) {
  std::uint64_t s = mix64(base);
  for (std::uint64_t v : stream) s = mix64(s ^ mix64(v));
  return s;
}

}  // namespace geogcn
