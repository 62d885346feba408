#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sslgcil {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
inline constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a base seed and a path of integer keys. Used to
/// give every sample / class / stage its own independent stream so results do
/// not depend on evaluation order.
inline constexpr std::uint64_t derive_seed(std::uint64_t base,
                                           std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t s = mix64(base);
  for (auto k : keys) s = mix64(s ^ mix64(k + 0x632be59bd9b4e019ULL));
  return s;
}

// Stage tags for derive_seed.
namespace seed_tag {
inline constexpr std::uint64_t kTasks = 1;
inline constexpr std::uint64_t kSamples = 2;
inline constexpr std::uint64_t kAugment = 3;
inline constexpr std::uint64_t kBackbone = 4;
inline constexpr std::uint64_t kHead = 5;
inline constexpr std::uint64_t kJitter = 6;
}  // namespace seed_tag

}  // namespace sslgcil
