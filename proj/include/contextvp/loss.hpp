#pragma once

#include "contextvp/autodiff.hpp"

namespace cvp {

/// Weights and conventions of the training objective
///   L = lambda_p * Lp + lambda_gdl * GDL.
struct LossSpec {
  int p = 1;
  double lambda_p = 1.0;
  double lambda_gdl = 1.0;
  /// Divide both terms by the per-frame element count (H * W * C).
  bool per_pixel_mean = false;
  /// Apply the outer |.| in each GDL term. Off gives the signed variant.
  bool gdl_outer_abs = true;

  /// Default weights for a given p: GDL weight 1 for p = 1, 0 for p = 2.
  static LossSpec for_p(int p);
  void validate() const;
};

/// p = 1: sum |y - x|; p = 2: sum (y - x)^2. Frames are [..., H, W, C].
Var lp_loss(Var y, Var x_hat, int p, bool per_pixel_mean = false);

/// Image gradient difference loss over rows (axis -3) and columns (axis -2).
Var gdl_loss(Var y, Var x_hat, bool outer_abs = true, bool per_pixel_mean = false);

Var combined_loss(Var y, Var x_hat, const LossSpec& spec);

// Value-only conveniences.
double lp_loss(const Tensor& y, const Tensor& x_hat, int p);
double gdl_loss(const Tensor& y, const Tensor& x_hat, bool outer_abs = true);
double combined_loss(const Tensor& y, const Tensor& x_hat, const LossSpec& spec);

}  // namespace cvp
