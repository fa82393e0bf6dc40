#include "abn/normalization.hpp"

#include <string>

namespace abn {

BatchNormState BatchNormState::fresh(std::size_t features, double epsilon, double momentum) {
  BatchNormState s{Tensor::ones({features}), Tensor::zeros({features}), Tensor::zeros({features}),
                   Tensor::ones({features}), epsilon, momentum};
  s.validate();
  return s;
}

void BatchNormState::validate() const {
  if (!(epsilon > 0.0)) throw ContractError("batch norm epsilon must be positive");
  if (!(momentum > 0.0 && momentum <= 1.0))
    throw ContractError("batch norm momentum must lie in (0, 1]");
  const std::size_t p = gamma.size();
  if (beta.size() != p || running_mean.size() != p || running_var.size() != p)
    throw ShapeError("batch norm state tensors disagree on feature dimension");
}

BatchMoments bn_statistics(const Var& rows, const BatchLayout& layout) {
  if (rows.value().rows() != layout.rows())
    throw ShapeError("bn_statistics: " + shape_to_string(rows.shape()) + " does not match " +
                     std::to_string(layout.frames) + " frames x " + std::to_string(layout.batch) +
                     " utterances");
  if (layout.valid_frames() < 2)
    throw DegenerateBatchError("bn_statistics: need at least 2 valid frames, got " +
                               std::to_string(layout.valid_frames()));
  const std::vector<double> w = layout.row_weights();
  Var mean = weighted_column_mean(rows, w);
  Var var = weighted_column_mean(square(sub_row(rows, mean)), w);
  return {mean, var};
}

BatchMoments bn_statistics(const SequenceBatch& batch) {
  return bn_statistics(Var(batch.time_major()), batch.layout());
}

Var bn_normalize(const Var& x, const Var& mean, const Var& var, double epsilon) {
  return mul_row(sub_row(x, mean), inv_sqrt(var, epsilon));
}

Var bn_affine(const Var& xhat, const Var& gamma, const Var& beta) {
  return add_row(mul_row(xhat, gamma), beta);
}

Var bn_standardize(const Var& rows, const BatchLayout& layout, BatchNormState& state, Mode mode) {
  if (rows.value().cols() != state.feature_dim())
    throw ShapeError("batch norm over " + std::to_string(state.feature_dim()) +
                     " features applied to " + shape_to_string(rows.shape()));
  Var xhat;
  if (mode == Mode::train) {
    BatchMoments m = bn_statistics(rows, layout);
    const double mom = state.momentum;
    for (std::size_t j = 0; j < state.feature_dim(); ++j) {
      state.running_mean[j] = (1.0 - mom) * state.running_mean[j] + mom * m.mean.value()[j];
      state.running_var[j] = (1.0 - mom) * state.running_var[j] + mom * m.var.value()[j];
    }
    xhat = bn_normalize(rows, m.mean, m.var, state.epsilon);
  } else {
    xhat = bn_normalize(rows, Var(state.running_mean), Var(state.running_var), state.epsilon);
  }
  return scale_rows(xhat, layout.row_weights());
}

Var bn_forward(const Var& rows, const BatchLayout& layout, BatchNormState& state, const Var& gamma,
               const Var& beta, Mode mode) {
  Var xhat = bn_standardize(rows, layout, state, mode);
  return scale_rows(bn_affine(xhat, gamma, beta), layout.row_weights());
}

SequenceBatch bn_forward(const SequenceBatch& batch, BatchNormState& state, Mode mode) {
  const BatchLayout layout = batch.layout();
  Var out = bn_forward(Var(batch.time_major()), layout, state, Var(state.gamma), Var(state.beta), mode);
  return SequenceBatch::from_time_major(out.value(), layout);
}

}  // namespace abn
