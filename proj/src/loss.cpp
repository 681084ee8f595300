#include "contextvp/loss.hpp"

namespace cvp {

LossSpec LossSpec::for_p(int p) {
  LossSpec s;
  s.p = p;
  s.lambda_p = 1.0;
  s.lambda_gdl = p == 1 ? 1.0 : 0.0;
  s.validate();
  return s;
}

void LossSpec::validate() const {
  if (p != 1 && p != 2) throw ConfigError("loss p must be 1 or 2, got " + std::to_string(p));
  if (lambda_p < 0.0 || lambda_gdl < 0.0) throw ConfigError("loss weights must be non-negative");
}

namespace {

void check_frames(const Var& y, const Var& x, const char* what) {
  if (!(y.shape() == x.shape()))
    throw ShapeError(std::string(what) + ": shape mismatch " + y.shape().str() + " vs " + x.shape().str());
  if (y.shape().rank() < 3) throw ShapeError(std::string(what) + ": frames must be [..., H, W, C], got " + y.shape().str());
}

double frame_elements(const Var& y) {
  const Shape& s = y.shape();
  const int r = s.rank();
  return static_cast<double>(s[r - 3] * s[r - 2] * s[r - 1]);
}

// Absolute forward difference along `axis`: |v[k] - v[k-1]|.
Var abs_diff(Var v, int axis) {
  const Index n = v.shape()[axis];
  return abs(slice(v, axis, 1, n) - slice(v, axis, 0, n - 1));
}

}  // namespace

Var lp_loss(Var y, Var x_hat, int p, bool per_pixel_mean) {
  check_frames(y, x_hat, "lp_loss");
  Var diff = y - x_hat;
  Var total = sum(p == 1 ? abs(diff) : square(diff));
  if (p != 1 && p != 2) throw ConfigError("loss p must be 1 or 2");
  return per_pixel_mean ? scale(total, 1.0 / frame_elements(y)) : total;
}

Var gdl_loss(Var y, Var x_hat, bool outer_abs, bool per_pixel_mean) {
  check_frames(y, x_hat, "gdl_loss");
  const int r = y.shape().rank();
  if (y.shape()[r - 3] < 2 || y.shape()[r - 2] < 2)
    throw ShapeError("gdl_loss needs H, W >= 2, got " + y.shape().str());
  Var total;
  for (int axis : {r - 3, r - 2}) {
    Var term = abs_diff(y, axis) - abs_diff(x_hat, axis);
    Var s = sum(outer_abs ? abs(term) : term);
    total = total.valid() ? total + s : s;
  }
  return per_pixel_mean ? scale(total, 1.0 / frame_elements(y)) : total;
}

Var combined_loss(Var y, Var x_hat, const LossSpec& spec) {
  spec.validate();
  Var loss = scale(lp_loss(y, x_hat, spec.p, spec.per_pixel_mean), spec.lambda_p);
  if (spec.lambda_gdl != 0.0)
    loss = loss + scale(gdl_loss(y, x_hat, spec.gdl_outer_abs, spec.per_pixel_mean), spec.lambda_gdl);
  return loss;
}

double lp_loss(const Tensor& y, const Tensor& x_hat, int p) {
  Tape tape(false);
  return lp_loss(tape.constant(y), tape.constant(x_hat), p).value().item();
}

double gdl_loss(const Tensor& y, const Tensor& x_hat, bool outer_abs) {
  Tape tape(false);
  return gdl_loss(tape.constant(y), tape.constant(x_hat), outer_abs).value().item();
}

double combined_loss(const Tensor& y, const Tensor& x_hat, const LossSpec& spec) {
  Tape tape(false);
  return combined_loss(tape.constant(y), tape.constant(x_hat), spec).value().item();
}

}  // namespace cvp
