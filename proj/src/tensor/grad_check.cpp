#include "lucf/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lucf/tensor/autograd.hpp"

namespace lucf {

namespace {

double eval_scalar(const ScalarFn& fn, const std::vector<Tensor>& inputs) {
  NoGradGuard guard;
  const Tensor out = fn(inputs);
  if (out.numel() != 1) throw std::invalid_argument("grad_check: function must return a scalar");
  const double v = out.item();
  if (!std::isfinite(v)) throw NonFiniteError("grad_check: function returned a non-finite value");
  return v;
}

}  // namespace

CheckReport grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, GradCheckOptions options, std::string name) {
  for (const auto& t : inputs) {
    if (t.dtype() != DType::f64) throw std::invalid_argument("grad_check: inputs must be f64");
  }
  std::vector<bool> previous;
  std::vector<Tensor> work = inputs;
  for (auto& t : work) {
    previous.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  CheckReport report;
  report.name = std::move(name);

  const Tensor out = fn(work);
  if (out.numel() != 1) throw std::invalid_argument("grad_check: function must return a scalar");
  if (!std::isfinite(out.item())) throw NonFiniteError("grad_check: function returned a non-finite value");
  out.backward();
  ++report.evaluations;

  std::vector<std::vector<double>> analytic;
  for (const auto& t : work) {
    const Tensor g = t.grad();
    analytic.push_back(g.defined() ? g.to_vector() : std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0));
  }

  for (std::size_t k = 0; k < work.size(); ++k) {
    auto data = work[k].mutable_data<double>();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + options.eps;
      const double fp = eval_scalar(fn, work);
      data[i] = saved - options.eps;
      const double fm = eval_scalar(fn, work);
      data[i] = saved;
      report.evaluations += 2;

      const double numeric = (fp - fm) / (2.0 * options.eps);
      const double a = analytic[k][i];
      if (!std::isfinite(a)) throw NonFiniteError("grad_check: non-finite analytic gradient");
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.rel_floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = rel;
        report.worst_input = k;
        report.worst_index = static_cast<std::int64_t>(i);
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }

  for (std::size_t k = 0; k < work.size(); ++k) {
    work[k].zero_grad();
    work[k].set_requires_grad(previous[k]);
  }
  report.passed = report.max_rel_error < options.tol;
  return report;
}

}  // namespace lucf
