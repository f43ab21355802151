#pragma once

#include <cstdint>
#include <random>

namespace fgno {

// Deterministic RNG. Sub-streams for parallelizable work (per-window
// dataset generation, per-sample noise) are derived as seed XOR index,
// scrambled through splitmix64 before seeding the engine.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(splitmix64(seed)) {}

  static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  static Rng sub(uint64_t seed, uint64_t index) { return Rng(seed ^ index); }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(eng_);
  }
  double normal() {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(eng_);
  }
  // in [0, n)
  uint64_t uniform_int(uint64_t n) {
    std::uniform_int_distribution<uint64_t> d(0, n - 1);
    return d(eng_);
  }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace fgno
