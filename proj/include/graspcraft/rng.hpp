#pragma once

#include <cmath>
#include <cstdint>

namespace graspcraft {

// Deterministic splitmix64 generator. All randomness in the project flows
// through this so trajectories are reproducible bit-for-bit from a seed,
// independent of platform stdlib distributions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  // Standard normal via Box-Muller. Draws a fresh pair every call so the
  // stream position is a pure function of the call count.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.28318530717958647692 * u2);
  }

  // Independent stream derived from this generator's seed and a stream id.
  // Does not advance this generator.
  Rng split(uint64_t stream) const {
    uint64_t z = state_ ^ (0x9e3779b97f4a7c15ull * (stream + 0x632be59bd9b4e019ull));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
  }

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

}  // namespace graspcraft
