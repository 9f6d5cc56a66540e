#pragma once

// Central finite-difference verification of analytic gradients. Run at
// 64-bit precision; 32-bit arithmetic is too noisy for step 1e-5.

#include <functional>
#include <string>
#include <vector>

#include "multibreath/autodiff.hpp"

namespace mb::ad {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool passed(double tol) const { return max_rel_err < tol; }
};

// f re-runs the forward pass from current parameter values and returns the
// scalar loss tensor (fresh graph each call).
inline GradCheckReport gradient_check(
    ParameterSet<double>& params,
    const std::function<Tensor<double>()>& f, double step = 1e-5) {
  GradCheckReport report;

  params.zero_grads();
  Tensor<double> loss = f();
  if (!loss.value().all_finite())
    throw NumericalError("gradient_check: non-finite loss");
  backward(loss);

  for (auto& [name, p] : params) {
    GradCheckEntry e{name, 0.0};
    Array<double>& v = p.raw_value();
    const Array<double>& g = p.grad();
    for (long i = 0; i < v.numel(); ++i) {
      double orig = v.v[i];
      v.v[i] = orig + step;
      double fp = f().value().v[0];
      v.v[i] = orig - step;
      double fm = f().value().v[0];
      v.v[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericalError("gradient_check: non-finite evaluation at " + name);
      double numeric = (fp - fm) / (2.0 * step);
      double analytic = g.v[i];
      double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
      e.max_rel_err = std::max(e.max_rel_err, std::abs(numeric - analytic) / denom);
    }
    report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace mb::ad
