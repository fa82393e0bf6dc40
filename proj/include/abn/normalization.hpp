#pragma once

#include <cstddef>

#include "abn/autodiff.hpp"
#include "abn/sequence.hpp"

namespace abn {

enum class Mode { train, infer };

inline constexpr double kDefaultBnEpsilon = 1e-5;
inline constexpr double kDefaultBnMomentum = 0.1;

// Learned scale/shift plus the running statistics used at inference.
struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double epsilon = kDefaultBnEpsilon;
  double momentum = kDefaultBnMomentum;

  // gamma = 1, beta = 0, running mean 0, running variance 1.
  static BatchNormState fresh(std::size_t features, double epsilon = kDefaultBnEpsilon,
                              double momentum = kDefaultBnMomentum);
  std::size_t feature_dim() const { return gamma.size(); }
  void validate() const;
};

struct BatchMoments {
  Var mean;  // [p]
  Var var;   // [p], population variance
};

// Per-feature mean and population variance over every valid frame of every
// utterance in a time-major [frames*batch x p] matrix. Padded rows carry
// zero weight. Throws DegenerateBatchError with fewer than two valid frames.
BatchMoments bn_statistics(const Var& rows, const BatchLayout& layout);
BatchMoments bn_statistics(const SequenceBatch& batch);

// (x - mean) / sqrt(var + epsilon), feature-wise over rows of x.
Var bn_normalize(const Var& x, const Var& mean, const Var& var, double epsilon);

// gamma * xhat + beta, feature-wise over rows of xhat.
Var bn_affine(const Var& xhat, const Var& gamma, const Var& beta);

// Standardized pre-affine activation. Train mode uses batch statistics and
// folds them into the running averages; infer mode reads the running
// averages. Padded rows of the result are exactly zero.
Var bn_standardize(const Var& rows, const BatchLayout& layout, BatchNormState& state, Mode mode);

// bn_standardize followed by bn_affine with the given scale/shift.
Var bn_forward(const Var& rows, const BatchLayout& layout, BatchNormState& state, const Var& gamma,
               const Var& beta, Mode mode);

// Convenience form using the state's own gamma/beta.
SequenceBatch bn_forward(const SequenceBatch& batch, BatchNormState& state, Mode mode);

}  // namespace abn
