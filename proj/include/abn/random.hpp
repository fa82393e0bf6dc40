#pragma once

#include <cstdint>
#include <random>

#include "abn/tensor.hpp"

namespace abn {

using Rng = std::mt19937_64;

// Uniform in [0, 1) from the top 53 bits; independent of the standard
// library's distribution implementations.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double gaussian(Rng& rng, double mean = 0.0, double stddev = 1.0);

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi);
Tensor gaussian_tensor(Shape shape, Rng& rng, double stddev = 1.0);

// Derives an independent stream for (seed, index) pairs.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace abn
