#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "abn/abn.hpp"

namespace abn {

struct GradCheckResult {
  std::string name;
  double max_error = 0.0;
};

inline constexpr double kGradTolerance = 1e-4;

// Finite-difference checks of every primitive and composite operation on
// random inputs drawn from `seed`.
std::vector<GradCheckResult> operation_gradient_checks(std::uint64_t seed);

// Checks d(mean CTC loss)/d(parameter) for every parameter tensor of a
// 2-layer model (n=4, p=6, V=3, B=2) in train mode with dropout active, one
// entry per (T, parameter). Generator output maps are randomized first so
// that every generator weight influences the loss.
//
// Numeric derivatives use the extrapolated scheme starting from a coarse
// step: the model mixes gradients of order 1e-9 (two-frame BN batches make a
// layer's output nearly input independent), where a fixed small step is
// dominated by rounding, with strongly curved coordinates where a fixed
// larger step is dominated by truncation.
inline constexpr double kModelFdStep = 3e-3;
std::vector<GradCheckResult> model_gradient_checks(const std::vector<Variant>& variants, std::uint64_t seed,
                                                   const std::vector<std::size_t>& frame_counts = {1, 2, 5, 7},
                                                   double step = kModelFdStep);

double worst(const std::vector<GradCheckResult>& results);

}  // namespace abn
