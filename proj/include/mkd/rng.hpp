#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mkd {

using Rng = std::mt19937_64;

/// Named sub-streams of the master seed.
namespace streams {
inline constexpr std::string_view kInitStudent1 = "init-s1";
inline constexpr std::string_view kInitStudent2 = "init-s2";
inline constexpr std::string_view kAugWeak = "aug-weak";
inline constexpr std::string_view kAugStrong = "aug-strong";
inline constexpr std::string_view kCutMix = "cutmix";
inline constexpr std::string_view kSampler = "sampler";
inline constexpr std::string_view kMcOracle = "mc-oracle";
}  // namespace streams

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Deterministic seed for (master, stream, a, b). Every random decision in a
/// training step is keyed by (stream, step, slot), so resuming only needs the
/// step counter.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(master ^ fnv1a(stream));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t master, std::string_view stream, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
  return Rng(derive_seed(master, stream, a, b));
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace mkd
