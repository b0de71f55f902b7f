#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace evpose {

// Deterministic RNG used everywhere randomness is needed. The standard
// library's distributions are implementation-defined, so uniform/normal/
// poisson draws are implemented here on top of a fixed-output generator.
// Streams are derived by key so a (seed, index) pair always yields the
// same sequence regardless of call order elsewhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  double normal() {
    // Box-Muller; one value per call, the pair's second half is dropped
    // to keep the stream position independent of caller parity.
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Knuth multiplication method; fine for the small means used here.
  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean > 64.0) {
      // normal approximation for large means, clamped at zero
      double d = std::round(mean + std::sqrt(mean) * normal());
      return d < 0.0 ? 0 : static_cast<int>(d);
    }
    double limit = std::exp(-mean);
    double prod = uniform();
    int n = 0;
    while (prod > limit) {
      prod *= uniform();
      ++n;
    }
    return n;
  }

 private:
  uint64_t state_;
};

// Stateless key derivation: mixes a label and indices into a base seed so
// independent streams (per clip, per sequence, per epoch) never overlap.
inline uint64_t derive_seed(uint64_t base, std::string_view label,
                            uint64_t a = 0, uint64_t b = 0) {
  uint64_t h = base ^ 0x853c49e6748fea9bull;
  for (char c : label) h = (h ^ static_cast<uint64_t>(c)) * 0x100000001b3ull;
  h ^= a + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h *= 0xc2b2ae3d27d4eb4full;
  h ^= b + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

}  // namespace evpose
