#pragma once

// Deterministic, platform-independent RNG. splitmix64 both as the generator
// core and for deriving per-clip / per-layer child seeds.

#include <cmath>
#include <cstdint>

namespace mpnerf {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  // Box-Muller; one value per call.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Independent child stream, e.g. per clip or per layer.
  Rng fork(uint64_t key) const {
    uint64_t s = state_ ^ (0x9e3779b97f4a7c15ULL * (key + 1));
    splitmix64(s);
    return Rng(s);
  }

 private:
  uint64_t state_;
};

}  // namespace mpnerf
