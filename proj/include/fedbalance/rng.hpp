#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedbalance {

using Rng = std::mt19937_64;

// Mixes a base seed with stream identifiers (round, client, ...) so every
// stochastic component gets an independent, reproducible stream.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  for (std::uint64_t s : stream) h = mix(h ^ mix(s));
  return h;
}

}  // namespace fedbalance
