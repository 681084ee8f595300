#include "contextvp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cvp {
namespace {

double evaluate(const ScalarGraph& f) {
  Tape tape(false);
  const double v = f(tape).value().item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: objective evaluated to a non-finite value");
  return v;
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarGraph& f, const std::vector<NamedTensor>& params,
                                  const GradCheckOptions& options) {
  if (options.step <= 0.0) throw ConfigError("finite_diff_check: step must be positive");

  std::vector<Tensor> analytic;
  double base = 0.0;
  {
    Tape tape;
    Var loss = f(tape);
    base = loss.value().item();
    if (!std::isfinite(base)) throw NumericError("finite_diff_check: objective evaluated to a non-finite value");
    tape.backward(loss);
    for (const auto& p : params) analytic.push_back(tape.grad(p.tensor));
  }

  GradCheckReport report;
  const double h = options.step;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t].tensor;
    const Index n = p.size();
    Index stride = 1;
    if (options.max_elements_per_tensor > 0 && n > options.max_elements_per_tensor)
      stride = (n + options.max_elements_per_tensor - 1) / options.max_elements_per_tensor;
    for (Index e = 0; e < n; e += stride) {
      const double saved = p.data()[e];
      p.data()[e] = saved + h;
      const double up = evaluate(f);
      p.data()[e] = saved - h;
      const double down = evaluate(f);
      p.data()[e] = saved;

      if (std::abs(up - 2.0 * base + down) / h > options.kink_tolerance) {
        report.excluded.push_back({params[t].name, e});
        continue;
      }
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t].data()[e];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++report.checked;
      if (rel > report.max_rel_error || report.worst_element < 0) {
        report.max_rel_error = std::max(rel, report.max_rel_error);
        if (rel >= report.max_rel_error) {
          report.worst_name = params[t].name;
          report.worst_element = e;
        }
      }
    }
  }
  return report;
}

}  // namespace cvp
