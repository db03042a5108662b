#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mmt/tensor.hpp"

namespace mmt {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  long worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  bool finite = true;  // false if any perturbed loss was non-finite
  std::string failure;
};

// Central-difference gradient check, meant to run in double precision.
// loss_fn must rebuild the graph from current parameter values and return
// the scalar loss; analytic gradients are read from each Parameter::grad
// (filled by the caller before invoking this, or via analytic_fn).
inline GradCheckResult grad_check(
    const std::function<double()>& loss_fn,
    const std::vector<Parameter<double>*>& params, double epsilon = 1e-5) {
  GradCheckResult res;
  for (Parameter<double>* p : params) {
    for (size_t i = 0; i < p->value.data.size(); ++i) {
      double saved = p->value.data[i];
      p->value.data[i] = saved + epsilon;
      double lp = loss_fn();
      p->value.data[i] = saved - epsilon;
      double lm = loss_fn();
      p->value.data[i] = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm)) {
        res.finite = false;
        res.failure = "non-finite loss perturbing " + p->name + "[" +
                      std::to_string(i) + "]";
        return res;
      }
      double numeric = (lp - lm) / (2.0 * epsilon);
      double analytic = p->grad.data[i];
      double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      double rel = std::abs(analytic - numeric) / denom;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p->name;
        res.worst_coord = static_cast<long>(i);
        res.analytic = analytic;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace mmt
