#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "contextvp/autodiff.hpp"

namespace cvp {

/// Builds a scalar graph on `tape`. Parameters must enter through
/// `tape.parameter(p)` so the checker can read their gradients.
using ScalarGraph = std::function<Var(Tape& tape)>;

struct ExcludedPoint {
  std::string name;
  Index element;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_name;
  Index worst_element = -1;
  std::size_t checked = 0;
  std::vector<ExcludedPoint> excluded;  // kinks: one-sided slopes disagree
};

struct GradCheckOptions {
  double step = 1e-6;
  /// Points where |f(p+h) - 2 f(p) + f(p-h)| / h exceeds this are treated as
  /// non-differentiable and skipped.
  double kink_tolerance = 1e-3;
  /// Check at most this many elements per tensor (evenly strided); 0 = all.
  Index max_elements_per_tensor = 0;
};

/// Central-difference check of reverse-mode gradients.
///
/// Returns max over checked elements of |analytic - numeric| / max(1, |analytic|).
/// Throws NumericError if any evaluation of f is not finite.
GradCheckReport finite_diff_check(const ScalarGraph& f, const std::vector<NamedTensor>& params,
                                  const GradCheckOptions& options = {});

}  // namespace cvp
