#pragma once

#include <cstddef>
#include <functional>

#include "tthlab/tensor.hpp"

namespace tth {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t probe_count = 0;
  bool passed = false;
};

using ScalarFunction = std::function<double(const Tensor&)>;

// Central differences, one coordinate at a time.
Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double h = kGradCheckStep);

// Max over coordinates of |a - n| / max(1e-12, |a| + |n|).
GradCheckReport grad_check(const Tensor& analytic, const Tensor& numeric,
                           double tol = kGradCheckTolerance);

}  // namespace tth
