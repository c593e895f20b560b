#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "agnn/autodiff.hpp"

namespace agnn {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Lower bound on the relative-error denominator, so coordinates whose true
  /// gradient is ~0 are judged on absolute error.
  double denominator_floor = 1e-8;
  /// Indices of the inputs to perturb; empty means all.
  std::vector<std::size_t> inputs;
};

struct GradCheckReport {
  double max_rel_err = 0;
  double max_abs_err = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t coordinates = 0;
  std::vector<double> per_input_rel_err;  // elementwise maximum, indexed like the inputs
  /// ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, floor) per input.
  std::vector<double> per_input_norm_rel_err;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences, coordinate by coordinate.
///
/// `fn(tape, vars)` must build the function on `tape` from the leaves `vars`
/// (one per input, same order) and return a single-element Var.
template <typename Scalar, typename Fn>
GradCheckReport grad_check(Fn&& fn, std::vector<Tensor<Scalar>> inputs, const GradCheckOptions& options = {}) {
  if (!(options.eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");

  auto evaluate = [&](Tape<Scalar>& tape, std::vector<Var<Scalar>>& vars) {
    vars.clear();
    for (const Tensor<Scalar>& t : inputs) vars.push_back(tape.leaf(t));
    Var<Scalar> out = fn(tape, std::as_const(vars));
    if (out.value().size() != 1) {
      throw std::invalid_argument("grad_check: function output " + out.shape().str() + " is not scalar");
    }
    return out;
  };

  Tape<Scalar> tape;
  std::vector<Var<Scalar>> vars;
  const Var<Scalar> out = evaluate(tape, vars);
  const Gradients<Scalar> grads = backward(out);

  std::vector<std::size_t> which = options.inputs;
  if (which.empty()) {
    for (std::size_t i = 0; i < inputs.size(); ++i) which.push_back(i);
  }

  auto scalar_at = [&]() {
    Tape<Scalar> t;
    std::vector<Var<Scalar>> v;
    return static_cast<double>(evaluate(t, v).value()[0]);
  };

  GradCheckReport report;
  report.per_input_rel_err.assign(inputs.size(), 0.0);
  report.per_input_norm_rel_err.assign(inputs.size(), 0.0);
  for (std::size_t k : which) {
    const Tensor<Scalar> analytic = grads[vars.at(k)];
    double diff_sq = 0, analytic_sq = 0, numeric_sq = 0;
    for (std::size_t idx = 0; idx < inputs[k].size(); ++idx) {
      const Scalar saved = inputs[k][idx];
      inputs[k][idx] = saved + static_cast<Scalar>(options.eps);
      const double up = scalar_at();
      inputs[k][idx] = saved - static_cast<Scalar>(options.eps);
      const double down = scalar_at();
      inputs[k][idx] = saved;

      const double numeric = (up - down) / (2 * options.eps);
      const double a = static_cast<double>(analytic[idx]);
      const double rel = relative_error(a, numeric, options.denominator_floor);
      diff_sq += (a - numeric) * (a - numeric);
      analytic_sq += a * a;
      numeric_sq += numeric * numeric;
      ++report.coordinates;
      report.max_abs_err = std::max(report.max_abs_err, std::abs(a - numeric));
      report.per_input_rel_err[k] = std::max(report.per_input_rel_err[k], rel);
      if (report.coordinates == 1 || rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_input = k;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
    report.per_input_norm_rel_err[k] =
        std::sqrt(diff_sq) / std::max({std::sqrt(analytic_sq), std::sqrt(numeric_sq), options.denominator_floor});
  }
  return report;
}

}  // namespace agnn
