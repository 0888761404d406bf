#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace misspec {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Packs a tuple of ids into one 64-bit seed by chaining splitmix64.
constexpr std::uint64_t hash64(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) h = splitmix64(h ^ p);
  return h;
}

// Seeded random source. Every stochastic operation takes one explicitly, so a
// run is a pure function of its seeds. Trial loops derive independent
// substreams with `substream(base, index)` so results do not depend on how the
// trials are scheduled across threads.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  static RandomStream substream(std::uint64_t base, std::uint64_t index,
                                std::uint64_t sub = 0) {
    return RandomStream(hash64({base, index, sub}));
  }

  // Consumes one draw; use as the base for a family of substreams.
  std::uint64_t fork() { return engine_(); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return normal_(engine_); }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace misspec
