#pragma once

#include "abn/autodiff.hpp"
#include "abn/normalization.hpp"
#include "abn/random.hpp"

namespace abn {

// Inverted dropout: in train mode each element is kept with probability
// 1 - rate and rescaled by 1/(1 - rate); infer mode is the identity.
Var dropout(const Var& x, double rate, Rng& rng, Mode mode);

}  // namespace abn
