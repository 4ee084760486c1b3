#pragma once

#include <cmath>
#include <cstdint>

namespace mammoseg {

// Counter-based deterministic generator. Each draw hashes (seed, counter)
// through the splitmix64 finalizer, so the full state is two u64 words and a
// stream can be checkpointed and resumed exactly. Constants are the published
// splitmix64 ones (Steele, Lea, Flood 2014).
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t hash(std::uint64_t a, std::uint64_t b) {
    return finalize(a + 0x9e3779b97f4a7c15ull * (b + 1));
  }

  // Independent stream for a derived task (per-sample, per-fold, ...).
  Rng derive(std::uint64_t index) const { return Rng(hash(seed_, index)); }

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + (++counter_) * 0x9e3779b97f4a7c15ull;
    return finalize(z);
  }

  // Uniform in [0, 1), 53 significant bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased-enough integer in [0, n) via the multiply-shift reduction.
  std::uint64_t below(std::uint64_t n) {
    return std::uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Box-Muller; consumes two draws, returns the cosine branch only.
  double normal(double mu = 0.0, double sigma = 1.0) {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(6.283185307179586476925287 * u2);
  }

 private:
  static std::uint64_t finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace mammoseg
