#pragma once

#include <functional>

#include "cslab/tensor.hpp"

namespace cslab {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool pass = false;
};

// Compares the analytic gradient of a scalar-valued function against central
// finite differences, coordinate by coordinate.
//
// rel(i) = |a_i - n_i| / max(|a_i|, |n_i|, 1e-6); the report carries the
// worst coordinate. `indices` restricts the check to a subset (empty = all).
GradCheckReport finite_difference_check(
    const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
    double step, double tol, const std::vector<std::size_t>& indices = {});

}  // namespace cslab
