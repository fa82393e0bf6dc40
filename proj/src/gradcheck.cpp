#include "abn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace abn {

namespace {

// Ridders' extrapolation of central differences; tableau a[j][i] holds the
// j-th extrapolation of the estimate at step h / shrink^i.
template <class Central>
double extrapolate(Central central, double h) {
  constexpr int kTable = 14;
  constexpr double kShrink = 1.4, kShrink2 = kShrink * kShrink, kSafe = 2.0;
  double a[kTable][kTable];
  a[0][0] = central(h);
  double best = a[0][0];
  double err = std::numeric_limits<double>::max();
  for (int i = 1; i < kTable; ++i) {
    h /= kShrink;
    a[0][i] = central(h);
    double fac = kShrink2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
      fac *= kShrink2;
      const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (e <= err) {
        err = e;
        best = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * err) break;
  }
  return best;
}

}  // namespace

double finite_diff_check(const ScalarFn& f, const Tensor& theta, const Tensor& analytic,
                         double step, Stencil stencil) {
  if (analytic.size() != theta.size())
    throw ShapeError("finite_diff_check: gradient " + shape_to_string(analytic.shape()) +
                     " does not match parameter " + shape_to_string(theta.shape()));
  Tensor probe = theta;
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto at = [&](double offset) {
      probe[i] = theta[i] + offset;
      const double v = f(probe);
      probe[i] = theta[i];
      return v;
    };
    auto central = [&](double h) { return (at(h) - at(-h)) / (2.0 * h); };
    const double numeric = stencil == Stencil::central ? central(step) : extrapolate(central, step);
    const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

double check_gradient(const ScalarBuilder& build, const Tensor& theta, double step, Stencil stencil) {
  Tape tape;
  Var x = tape.variable(theta);
  Var y = build(x);
  tape.backward(y);
  const Tensor analytic = tape.grad(x);
  return finite_diff_check([&](const Tensor& t) { return build(Var(t)).value().item(); }, theta,
                           analytic, step, stencil);
}

}  // namespace abn
