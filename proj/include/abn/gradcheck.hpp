#pragma once

#include <functional>

#include "abn/autodiff.hpp"

namespace abn {

using ScalarFn = std::function<double(const Tensor&)>;

inline constexpr double kDefaultFdStep = 1e-5;

// Numeric derivative estimate. `central` is (f(+h) - f(-h)) / 2h at the
// given step. `extrapolated` starts from central differences at h and
// shrinks the step geometrically, Richardson-extrapolating the sequence and
// keeping the estimate with the smallest internal error estimate (Ridders'
// scheme). It needs no step tuning when some coordinates are dominated by
// rounding and others by curvature.
enum class Stencil { central, extrapolated };

// Max over coordinates of |analytic_i - numeric_i| / (|analytic_i| + 1e-8).
double finite_diff_check(const ScalarFn& f, const Tensor& theta, const Tensor& analytic,
                         double step = kDefaultFdStep, Stencil stencil = Stencil::central);

// Builds a scalar from theta. The same builder is used for the analytic
// gradient (recorded on a tape) and for the central differences (evaluated
// on constants, so no tape is allocated).
using ScalarBuilder = std::function<Var(const Var& theta)>;

double check_gradient(const ScalarBuilder& build, const Tensor& theta,
                      double step = kDefaultFdStep, Stencil stencil = Stencil::central);

}  // namespace abn
