#pragma once

#include <cstdint>
#include <random>

#include "pyratten/tensor.hpp"

namespace pyratten {

// Portable seeded generator: the engine is std::mt19937_64 (bit-exact across
// standard libraries); distributions are implemented here because the
// standard ones are not specified bit-for-bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n), rejection sampled so it is unbiased.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller; caches the second variate.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// He-uniform (fan-in) initialisation: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor he_uniform(Shape shape, int fan_in, Rng& rng);
Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng);
Tensor normal_tensor(Shape shape, double stddev, Rng& rng);

}  // namespace pyratten
