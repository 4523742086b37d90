#pragma once

// Central finite-difference oracle for gradient tests. Independent of the
// backward closures: it only calls the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mnm/numerics/tensor.h"

namespace mnm::testing {

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst;  // "<tensor index>:<element>"
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps gradients
// that are zero up to round-off from producing spurious ratios.
inline GradCheckResult CheckGradients(const std::function<Tensor()>& loss_fn,
                                      std::vector<Tensor> inputs,
                                      double step = 1e-5, double floor = 1e-3) {
  for (Tensor& t : inputs) t.ZeroGrad();
  Backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (const Tensor& t : inputs) {
    std::vector<double> g(t.numel(), 0.0);
    if (!t.grad().empty()) std::copy(t.grad().begin(), t.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto values = inputs[ti].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_fn().item();
      values[i] = saved - step;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[ti][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = std::to_string(ti) + ":" + std::to_string(i) +
                       " analytic=" + std::to_string(a) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace mnm::testing
