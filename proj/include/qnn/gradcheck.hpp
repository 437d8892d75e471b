#pragma once

// Central finite-difference gradient checking. Only forward evaluations are
// used to build the numeric estimate, so the check is independent of the
// backward rules it validates.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "qnn/tensor.hpp"

namespace qnn::check {

struct GradCheckResult {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "param[i]: analytic=..., numeric=..."
};

/// Relative error with a floor on the denominator so that gradients near zero
/// are compared on an absolute 1e-3 scale instead of blowing up.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// `loss_fn` must rebuild the scalar loss from the current values of
/// `params`. Every element of every parameter is perturbed by ±step.
inline GradCheckResult gradcheck(const std::function<Tensor<double>()>& loss_fn,
                                 std::vector<Tensor<double>> params,
                                 const std::vector<std::string>& names = {}, double step = 1e-4,
                                 double tolerance = 1e-5) {
  for (auto& p : params) p.zero_grad();
  backward(loss_fn());
  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus = 0;
      double minus = 0;
      {
        NoGradGuard no_grad;
        values[i] = saved + step;
        plus = loss_fn().item();
        values[i] = saved - step;
        minus = loss_fn().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2 * step);
      const double err = relative_error(analytic[i], numeric);
      ++result.checked;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : INFINITY;
        const std::string name = pi < names.size() ? names[pi] : "param" + std::to_string(pi);
        result.worst = name + "[" + std::to_string(i) + "]: analytic=" + std::to_string(analytic[i]) +
                       ", numeric=" + std::to_string(numeric);
      }
    }
  }
  result.passed = result.max_rel_error < tolerance;
  return result;
}

}  // namespace qnn::check
