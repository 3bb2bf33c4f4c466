#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <vector>

#include "vitmat/tensor.hpp"

namespace vitmat {

/// Value and analytic gradient of a scalar objective at one point.
struct ValueAndGrad {
  double value = 0.0;
  Tensor<double> grad;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  /// 0 checks every entry; otherwise a seeded sample of this many entries.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

/// Compares `f`'s analytic gradient with central differences. `f` maps x to
/// its value and gradient; it is evaluated once for the analytic gradient and
/// twice per checked entry. Relative error per entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Non-finite values surface as NumericError from the op that produced them.
///
/// Where the true gradient is identically zero the relative error measures
/// rounding noise, roughly 1e-16 * |f| / eps / 1e-8; max_abs_error is the
/// meaningful figure there.
template <typename F>
  requires std::invocable<F&, const Tensor<double>&>
GradCheckReport grad_check_report(F&& f, const Tensor<double>& x, const GradCheckOptions& options = {}) {
  const ValueAndGrad base = f(x);
  if (!std::isfinite(base.value)) throw NumericError("grad_check: objective is not finite");
  if (base.grad.shape() != x.shape())
    throw DimensionError("grad_check: gradient shape " + shape_str(base.grad.shape()) + " vs input " +
                         shape_str(x.shape()));

  std::vector<std::size_t> entries(x.numel());
  std::iota(entries.begin(), entries.end(), std::size_t{0});
  if (options.max_entries != 0 && options.max_entries < entries.size()) {
    Rng rng(options.seed);
    rng.shuffle(entries.begin(), entries.end());
    entries.resize(options.max_entries);
    std::sort(entries.begin(), entries.end());
  }

  Tensor<double> probe = x;
  GradCheckReport report;
  for (const std::size_t i : entries) {
    const double orig = probe[i];
    probe[i] = orig + options.eps;
    const double plus = f(probe).value;
    probe[i] = orig - options.eps;
    const double minus = f(probe).value;
    probe[i] = orig;
    if (!std::isfinite(plus) || !std::isfinite(minus)) throw NumericError("grad_check: objective is not finite");
    const double numeric = (plus - minus) / (2.0 * options.eps);
    const double analytic = base.grad[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double abs_err = std::abs(analytic - numeric);
    if (abs_err / denom > report.max_rel_error) {
      report.max_rel_error = abs_err / denom;
      report.worst_index = i;
    }
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
  }
  return report;
}

/// Max relative error (see grad_check_report).
template <typename F>
  requires std::invocable<F&, const Tensor<double>&>
double grad_check(F&& f, const Tensor<double>& x, const GradCheckOptions& options = {}) {
  return grad_check_report(std::forward<F>(f), x, options).max_rel_error;
}

template <typename F>
  requires std::invocable<F&, const Tensor<double>&>
double grad_check(F&& f, const Tensor<double>& x, double eps) {
  return grad_check(std::forward<F>(f), x, GradCheckOptions{eps, 0, 0});
}

}  // namespace vitmat
