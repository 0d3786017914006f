#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pyratten/tensor.hpp"

namespace pyratten {

struct GradSuiteEntry {
  std::string name;
  std::string shape;  // shape of the checked tensor
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  double analytic = 0.0;  // worst element
  double numeric = 0.0;
};

// Default step and pass threshold for the compiled precision.
double default_gradcheck_eps();
double default_gradcheck_tolerance();

std::vector<std::string> gradient_suite_ops();

// Finite-difference checks of every differentiable op on randomized small
// shapes (at most 1x8x10x10). `only` restricts the run to one op name.
std::vector<GradSuiteEntry> run_gradient_suite(const std::string& only, double eps,
                                               std::uint64_t seed);

}  // namespace pyratten
