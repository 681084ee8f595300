#include <doctest.h>

#include <cmath>

#include "contextvp/metrics.hpp"
#include "oracles.hpp"

using namespace cvp;

TEST_CASE("mse and psnr") {
  const Tensor y = oracle::random_tensor(Shape{2, 5, 6, 1}, 1, 0, 1);
  CHECK(mse(y, y) == 0.0);
  CHECK(psnr(y, y) == kPsnrCap);
  const Tensor a = Tensor::constant(Shape{4, 4, 1}, 0.3), b = Tensor::constant(Shape{4, 4, 1}, 0.4);
  CHECK(mse(a, b) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-10));
  const Tensor x = oracle::random_tensor(Shape{2, 5, 6, 1}, 2, 0, 1);
  double direct = 0.0;
  for (Index k = 0; k < y.size(); ++k) direct += (y.data()[k] - x.data()[k]) * (y.data()[k] - x.data()[k]);
  direct /= static_cast<double>(y.size());
  CHECK(mse(y, x) == doctest::Approx(direct).epsilon(1e-14));
  CHECK(psnr(y, x) == doctest::Approx(-10.0 * std::log10(direct)).epsilon(1e-12));
  CHECK(psnr_from_mse(1e-11) == kPsnrCap);
  double prev = INFINITY;
  for (double m : {1e-9, 1e-6, 1e-3, 0.1, 1.0}) {
    CHECK(psnr_from_mse(m) < prev);
    prev = psnr_from_mse(m);
  }
  CHECK_THROWS_AS(mse(y, Tensor(Shape{2, 5, 6, 2})), ShapeError);
  CHECK(mse(y.cast<float>(), y.cast<float>()) == 0.0);
}

TEST_CASE("ssim identities") {
  const Tensor x = oracle::random_tensor(Shape{2, 13, 12, 3}, 3, 0, 1);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  const Tensor y = oracle::random_tensor(Shape{2, 13, 12, 3}, 4, 0, 1);
  CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-14));
  CHECK(ssim(x, y) < 1.0);
  CHECK_THROWS_AS(ssim(Tensor(Shape{10, 12, 1}), Tensor(Shape{10, 12, 1})), ShapeError);
  CHECK_THROWS_AS(ssim(x, Tensor(Shape{2, 13, 12, 1})), ShapeError);
}

TEST_CASE("ssim of a checkerboard against its inverse is negative") {
  Tensor board(Shape{16, 16, 1});
  for (Index i = 0; i < 16; ++i)
    for (Index j = 0; j < 16; ++j) board(i, j, 0) = static_cast<double>((i + j) % 2);
  Tensor inverse = board;
  inverse.array() = 1.0 - board.array();
  CHECK(ssim(board, inverse) < 0.0);
}

TEST_CASE("ssim of constants reduces to the luminance term") {
  const double a = 0.25, b = 0.75, c1 = 1e-4;
  const Tensor y = Tensor::constant(Shape{11, 11, 1}, a), x = Tensor::constant(Shape{11, 11, 1}, b);
  CHECK(ssim(y, x) == doctest::Approx((2 * a * b + c1) / (a * a + b * b + c1)).epsilon(1e-12));
}

TEST_CASE("ssim matches a direct single-window evaluation") {
  const Tensor y = oracle::random_tensor(Shape{11, 11, 1}, 5, 0, 1), x = oracle::random_tensor(Shape{11, 11, 1}, 6, 0, 1);
  double g[11][11], total = 0.0;
  for (int r = 0; r < 11; ++r)
    for (int s = 0; s < 11; ++s) total += g[r][s] = std::exp(-((r - 5) * (r - 5) + (s - 5) * (s - 5)) / (2 * 1.5 * 1.5));
  double my = 0, mx = 0, syy = 0, sxx = 0, sxy = 0;
  for (int r = 0; r < 11; ++r)
    for (int s = 0; s < 11; ++s) {
      const double w = g[r][s] / total, a = y(r, s, 0), b = x(r, s, 0);
      my += w * a;
      mx += w * b;
      syy += w * a * a;
      sxx += w * b * b;
      sxy += w * a * b;
    }
  const double vy = syy - my * my, vx = sxx - mx * mx, cov = sxy - mx * my;
  const double expected = (2 * mx * my + 1e-4) * (2 * cov + 9e-4) / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
  CHECK(ssim(y, x) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("motion masks and masked mse") {
  Tensor prev(Shape{2, 2, 2}), last(Shape{2, 2, 2});
  last(0, 1, 1) = 0.5;   // moves in the second channel only
  last(1, 0, 0) = 0.04;  // below threshold
  const Tensor m = motion_mask(last, prev);
  CHECK(m.shape() == Shape{2, 2, 1});
  CHECK(m.array().sum() == 1.0);
  CHECK(m(0, 1, 0) == 1.0);

  Tensor y(Shape{2, 2, 2}), x(Shape{2, 2, 2});
  y(0, 1, 0) = 0.2;
  y(0, 1, 1) = 0.4;
  y(1, 1, 1) = 0.9;  // outside the mask
  const auto masked = masked_mse(y, x, m);
  REQUIRE(masked.has_value());
  CHECK(*masked == doctest::Approx((0.04 + 0.16) / 2.0).epsilon(1e-14));
  CHECK_FALSE(masked_mse(y, x, Tensor(Shape{2, 2, 1})).has_value());
  CHECK_THROWS_AS(masked_mse(y, x, Tensor(Shape{3, 2, 1})), ShapeError);
}
