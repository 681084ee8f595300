#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "contextvp/error.hpp"
#include "contextvp/tensor.hpp"

namespace cvp {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kPsnrCapMse = 1e-10;
inline constexpr Index kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

namespace detail {

template <typename Scalar>
void require_same_shape(const BasicTensor<Scalar>& y, const BasicTensor<Scalar>& x, const char* what) {
  if (!(y.shape() == x.shape()))
    throw ShapeError(std::string(what) + ": shape mismatch " + y.shape().str() + " vs " + x.shape().str());
}

/// Normalized 11x11 Gaussian weights, row-major.
inline Eigen::Matrix<double, kSsimWindow, kSsimWindow> ssim_window() {
  Eigen::Matrix<double, kSsimWindow, kSsimWindow> w;
  const double c = 0.5 * static_cast<double>(kSsimWindow - 1);
  for (Index r = 0; r < kSsimWindow; ++r)
    for (Index s = 0; s < kSsimWindow; ++s) {
      const double dr = static_cast<double>(r) - c, ds = static_cast<double>(s) - c;
      w(r, s) = std::exp(-(dr * dr + ds * ds) / (2.0 * kSsimSigma * kSsimSigma));
    }
  return w / w.sum();
}

}  // namespace detail

/// Mean over all scalars of (y - x)^2.
template <typename Scalar>
double mse(const BasicTensor<Scalar>& y, const BasicTensor<Scalar>& x_hat) {
  detail::require_same_shape(y, x_hat, "mse");
  if (y.size() == 0) throw ShapeError("mse of an empty tensor");
  return (y.array().template cast<double>() - x_hat.array().template cast<double>()).square().mean();
}

/// 10 log10(1 / mse) for unit peak, capped for near-perfect predictions.
inline double psnr_from_mse(double m) { return m < kPsnrCapMse ? kPsnrCap : -10.0 * std::log10(m); }

template <typename Scalar>
double psnr(const BasicTensor<Scalar>& y, const BasicTensor<Scalar>& x_hat) {
  return psnr_from_mse(mse(y, x_hat));
}

/// Mean local SSIM of [..., H, W, C] frames (unit peak, 11x11 Gaussian
/// window with sigma 1.5, valid positions only). Leading axes and channels
/// are averaged.
template <typename Scalar>
double ssim(const BasicTensor<Scalar>& y, const BasicTensor<Scalar>& x_hat) {
  detail::require_same_shape(y, x_hat, "ssim");
  if (y.rank() < 3) throw ShapeError("ssim expects [..., H, W, C], got " + y.shape().str());
  const Index h = y.dim(-3), w = y.dim(-2), c = y.dim(-1);
  if (h < kSsimWindow || w < kSsimWindow)
    throw ShapeError("ssim needs frames of at least 11x11, got " + std::to_string(h) + "x" + std::to_string(w));
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  static const auto window = detail::ssim_window();
  const Index frames = y.size() / (h * w * c);
  const Index oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  double total = 0.0;
  for (Index f = 0; f < frames; ++f)
    for (Index ch = 0; ch < c; ++ch) {
      auto at = [&](const BasicTensor<Scalar>& t, Index r, Index s) {
        return static_cast<double>(t.data()[((f * h + r) * w + s) * c + ch]);
      };
      for (Index r0 = 0; r0 < oh; ++r0)
        for (Index s0 = 0; s0 < ow; ++s0) {
          double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
          for (Index r = 0; r < kSsimWindow; ++r)
            for (Index s = 0; s < kSsimWindow; ++s) {
              const double g = window(r, s);
              const double a = at(y, r0 + r, s0 + s), b = at(x_hat, r0 + r, s0 + s);
              my += g * a;
              mx += g * b;
              yy += g * a * a;
              xx += g * b * b;
              xy += g * a * b;
            }
          const double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
          total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
  return total / static_cast<double>(frames * c * oh * ow);
}

/// Mean of (y - x)^2 over positions where `mask` ([..., H, W, 1] or matching
/// shape) is nonzero, or nullopt when the mask is empty.
template <typename Scalar>
std::optional<double> masked_mse(const BasicTensor<Scalar>& y, const BasicTensor<Scalar>& x_hat,
                                 const BasicTensor<Scalar>& mask) {
  detail::require_same_shape(y, x_hat, "masked_mse");
  const Index c = y.dim(-1);
  const Index mc = mask.dim(-1);
  if (mask.size() * c != y.size() * mc) throw ShapeError("masked_mse: mask shape " + mask.shape().str());
  double sum = 0.0;
  Index n = 0;
  for (Index p = 0; p < y.size(); ++p) {
    const Index m = mc == c ? p : p / c;
    if (mask.data()[m] == Scalar(0)) continue;
    const double d = static_cast<double>(y.data()[p]) - static_cast<double>(x_hat.data()[p]);
    sum += d * d;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

/// Motion mask [H, W, 1]: 1 where any channel of |a - b| exceeds `threshold`.
template <typename Scalar>
BasicTensor<Scalar> motion_mask(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, double threshold = 0.05) {
  detail::require_same_shape(a, b, "motion_mask");
  const Index c = a.dim(-1);
  Shape s = a.shape();
  s[s.rank() - 1] = 1;
  BasicTensor<Scalar> m(s);
  for (Index p = 0; p < a.size(); ++p)
    if (std::abs(static_cast<double>(a.data()[p]) - static_cast<double>(b.data()[p])) > threshold)
      m.data()[p / c] = Scalar(1);
  return m;
}

/// Mean metrics over a set of predictions.
struct MetricRow {
  double psnr = 0.0;
  std::optional<double> ssim;  // absent when frames are smaller than the SSIM window
  double mse = 0.0;
  Index count = 0;
};

/// Overall metrics plus one row per recursive step (a single row for
/// next-frame prediction).
struct MetricReport {
  MetricRow overall;
  std::vector<MetricRow> steps;
  bool motion_masked = false;
};

}  // namespace cvp
