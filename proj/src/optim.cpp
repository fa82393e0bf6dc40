#include "abn/optim.hpp"

#include <cmath>

#include "abn/errors.hpp"

namespace abn {

AdamState AdamState::for_params(const std::vector<Tensor*>& params) {
  AdamState s;
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr, const AdamConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    if (grads[k].shape() != p.shape())
      throw ShapeError("adam_step: gradient " + shape_to_string(grads[k].shape()) + " for parameter " +
                       shape_to_string(p.shape()));
    auto pd = p.data();
    auto g = grads[k].data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      pd[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
    }
  }
}

std::string to_string(LrAction a) {
  switch (a) {
    case LrAction::keep: return "keep";
    case LrAction::halve: return "halve";
    case LrAction::stop: return "stop";
  }
  return "?";
}

LrAction lr_schedule(const std::vector<double>& history, double halve_threshold, double stop_threshold) {
  if (history.size() < 2) throw ContractError("lr_schedule needs at least two epochs of history");
  const double prev = history[history.size() - 2];
  const double curr = history.back();
  if (!(prev > 0.0)) throw ContractError("lr_schedule: previous metric must be positive");
  const double r = (prev - curr) / prev;
  if (r < stop_threshold) return LrAction::stop;
  if (r < halve_threshold) return LrAction::halve;
  return LrAction::keep;
}

}  // namespace abn
