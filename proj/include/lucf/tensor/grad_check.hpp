#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lucf/tensor/tensor.hpp"

namespace lucf {

struct CheckReport {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = false;
  /// Location of the worst relative error: which input and which element.
  std::size_t worst_input = 0;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::int64_t evaluations = 0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor),
  /// so entries whose true gradient is zero are judged on absolute error.
  double rel_floor = 1e-6;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>& inputs)>;

/// Compares reverse-mode gradients of `fn` at `inputs` with central
/// differences (f(x + eps) - f(x - eps)) / (2 eps), element by element.
/// Inputs must be f64 and are perturbed in place (and restored).
CheckReport grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, GradCheckOptions options = {},
                       std::string name = {});

}  // namespace lucf
