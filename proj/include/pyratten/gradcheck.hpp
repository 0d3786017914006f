#pragma once

#include <cstddef>
#include <functional>

#include "pyratten/tensor.hpp"

namespace pyratten {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;   // at worst_index
};

// Compares the taped gradient of the scalar function f at x against central
// differences with step eps, element by element:
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
// f must not mutate x. Throws NumericError if any probe is non-finite.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double eps);

}  // namespace pyratten
