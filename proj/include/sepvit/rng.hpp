#pragma once

#include <cstdint>

namespace sepvit {

// SplitMix64. Integer-only state transitions, so identical seeds produce
// identical draw sequences on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n). Modulo bias is irrelevant for shuffling/derivation purposes here.
  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // Derive an independent deterministic stream for a sub-purpose.
  Rng fork(std::uint64_t tag) const {
    Rng mix(state_ ^ (0xA0761D6478BD642Full * (tag + 1)));
    return Rng(mix.next_u64());
  }

 private:
  std::uint64_t state_;
};

}  // namespace sepvit
