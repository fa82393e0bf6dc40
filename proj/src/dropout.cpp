#include "abn/dropout.hpp"

#include <vector>

namespace abn {

Var dropout(const Var& x, double rate, Rng& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must lie in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) return x;
  Tensor keep(x.shape());
  const double s = 1.0 / (1.0 - rate);
  for (double& v : keep.data()) v = uniform01(rng) < rate ? 0.0 : s;
  return mul(x, Var(std::move(keep)));
}

}  // namespace abn
