#include "tthlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "tthlab/error.hpp"

namespace tth {

Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double h) {
  if (!(h > 0.0)) raise(ErrorKind::Config, "finite difference step must be positive");
  Tensor probe = x;
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + h;
    const double up = f(probe);
    probe[i] = original - h;
    const double down = f(probe);
    probe[i] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      raise(ErrorKind::Numeric, "function is not finite near coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(grad));
}

GradCheckReport grad_check(const Tensor& analytic, const Tensor& numeric, double tol) {
  if (analytic.shape() != numeric.shape()) {
    raise(ErrorKind::Dimension, "grad_check shapes differ");
  }
  GradCheckReport report;
  report.probe_count = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double rel = std::abs(a - n) / std::max(1e-12, std::abs(a) + std::abs(n));
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace tth
