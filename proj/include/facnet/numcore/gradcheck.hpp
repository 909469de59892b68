#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "facnet/numcore/matrix.hpp"

namespace facnet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::string worst_name;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
  bool eval_failed = false;  // f returned a non-finite value
  std::string message;

  bool passed(double tolerance) const { return !eval_failed && max_rel_error < tolerance; }
};

/// Compares analytic gradients against central differences, coordinate by
/// coordinate. Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
/// coordinates whose true gradient is near zero from being judged on
/// finite-difference round-off alone.
///
/// `f` is called with the (temporarily perturbed) parameter list and must
/// return the scalar objective. `params` is restored before returning.
template <typename T, typename F>
GradCheckReport finite_diff_check(F&& f, std::vector<Matrix<T>>& params, const std::vector<Matrix<T>>& analytic,
                                  T step, const std::vector<std::string>& names = {},
                                  double floor = 1e-8) {
  if (!(step > 0)) throw ContractError("finite_diff_check: step must be positive");
  if (params.size() != analytic.size()) throw ContractError("finite_diff_check: gradient count mismatch");

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    params[p].require_same_shape(analytic[p], "finite_diff_check");
    const std::string name = p < names.size() ? names[p] : "param" + std::to_string(p);
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const T saved = params[p][i];
      params[p][i] = saved + step;
      const T up = f(std::as_const(params));
      params[p][i] = saved - step;
      const T down = f(std::as_const(params));
      params[p][i] = saved;
      ++report.coordinates;

      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.eval_failed = true;
        report.worst_param = p;
        report.worst_index = i;
        report.worst_name = name;
        report.message = "non-finite objective while perturbing " + name + "[" + std::to_string(i) + "]";
        return report;
      }

      const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * static_cast<double>(step));
      const double exact = static_cast<double>(analytic[p][i]);
      const double denom = std::max({std::abs(exact), std::abs(numeric), floor});
      const double rel = std::abs(exact - numeric) / denom;
      if (rel > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.worst_param = p;
        report.worst_index = i;
        report.worst_name = name;
        report.worst_analytic = exact;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace facnet
