#include "pyratten/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace pyratten {

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be > 0");

  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  std::vector<Real> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = f(probe);
    if (out.numel() != 1) {
      throw ShapeError("grad_check: function must be scalar valued, got " +
                       out.shape().str());
    }
    if (!std::isfinite(static_cast<double>(out.item()))) {
      throw NumericError("grad_check: non-finite function value at the base point");
    }
    tape.backward(out);
    if (probe.has_grad()) {
      analytic.assign(probe.grad().begin(), probe.grad().end());
    } else {
      analytic.assign(probe.numel(), Real(0));
    }
  }

  NoTapeScope no_tape;
  GradCheckResult result;
  auto values = probe.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real saved = values[i];
    const Real hi = static_cast<Real>(saved + eps);
    const Real lo = static_cast<Real>(saved - eps);
    values[i] = hi;
    const double plus = f(probe).item();
    values[i] = lo;
    const double minus = f(probe).item();
    values[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("grad_check: non-finite value while probing element " +
                         std::to_string(i));
    }
    // Divide by the step actually taken after rounding to Real.
    const double numeric = (plus - minus) / (static_cast<double>(hi) - static_cast<double>(lo));
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    if (rel > result.max_rel_error || i == 0) {
      result = GradCheckResult{rel, i, a, numeric};
    }
  }
  return result;
}

}  // namespace pyratten
