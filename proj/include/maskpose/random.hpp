#pragma once

#include <cstdint>
#include <initializer_list>

namespace maskpose {

/// splitmix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent seed from a base seed and a list of stream ids.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t s = splitmix64(base);
  for (std::uint64_t id : ids) s = splitmix64(s ^ splitmix64(id + 0x632be59bd9b4e019ULL));
  return s;
}

}  // namespace maskpose
