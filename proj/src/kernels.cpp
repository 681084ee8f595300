#include "contextvp/tensor.hpp"

namespace cvp {
namespace {

using RowMatrix = Tensor::RowMajorMatrix;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  Index planes;  // product of leading (batch) axes
  Index rows, cols, in_ch, out_ch, kh, kw;
  Index patch() const { return kh * kw * in_ch; }
  Index positions() const { return planes * rows * cols; }
};

ConvGeometry check_conv(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  if (input.rank() < 3) throw ShapeError("conv2d input must be [..., A, B, Cin], got " + input.shape().str());
  if (kernel.rank() != 4) throw ShapeError("conv2d kernel must be [kh, kw, Cin, Cout], got " + kernel.shape().str());
  ConvGeometry g{};
  g.rows = input.dim(-3);
  g.cols = input.dim(-2);
  g.in_ch = input.dim(-1);
  g.planes = input.size() / std::max<Index>(g.rows * g.cols * g.in_ch, 1);
  g.kh = kernel.dim(0);
  g.kw = kernel.dim(1);
  g.out_ch = kernel.dim(3);
  if (g.kh % 2 == 0) throw ShapeError("conv2d kernel height (axis 0) must be odd, got " + kernel.shape().str());
  if (g.kw % 2 == 0) throw ShapeError("conv2d kernel width (axis 1) must be odd, got " + kernel.shape().str());
  if (kernel.dim(2) != g.in_ch)
    throw ShapeError("conv2d channel mismatch: input channels (axis -1) " + std::to_string(g.in_ch) +
                     " vs kernel input channels (axis 2) " + std::to_string(kernel.dim(2)));
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != g.out_ch))
    throw ShapeError("conv2d bias must be [" + std::to_string(g.out_ch) + "], got " + bias.shape().str());
  return g;
}

// Patch matrix: row (p, a, b), column (dh, dw, ci). Out-of-frame taps are 0.
RowMatrix im2col(const double* in, const ConvGeometry& g) {
  RowMatrix cols(g.positions(), g.patch());
  const Index rh = g.kh / 2, rw = g.kw / 2;
  for (Index p = 0; p < g.planes; ++p) {
    const double* plane = in + p * g.rows * g.cols * g.in_ch;
    for (Index a = 0; a < g.rows; ++a) {
      for (Index b = 0; b < g.cols; ++b) {
        double* row = cols.data() + ((p * g.rows + a) * g.cols + b) * g.patch();
        for (Index dh = 0; dh < g.kh; ++dh) {
          const Index sa = a + dh - rh;
          double* tap_row = row + dh * g.kw * g.in_ch;
          if (sa < 0 || sa >= g.rows) {
            std::fill_n(tap_row, g.kw * g.in_ch, 0.0);
            continue;
          }
          for (Index dw = 0; dw < g.kw; ++dw) {
            const Index sb = b + dw - rw;
            if (sb < 0 || sb >= g.cols)
              std::fill_n(tap_row + dw * g.in_ch, g.in_ch, 0.0);
            else
              std::copy_n(plane + (sa * g.cols + sb) * g.in_ch, g.in_ch, tap_row + dw * g.in_ch);
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const RowMatrix& cols, double* out, const ConvGeometry& g) {
  const Index rh = g.kh / 2, rw = g.kw / 2;
  for (Index p = 0; p < g.planes; ++p) {
    double* plane = out + p * g.rows * g.cols * g.in_ch;
    for (Index a = 0; a < g.rows; ++a) {
      for (Index b = 0; b < g.cols; ++b) {
        const double* row = cols.data() + ((p * g.rows + a) * g.cols + b) * g.patch();
        for (Index dh = 0; dh < g.kh; ++dh) {
          const Index sa = a + dh - rh;
          if (sa < 0 || sa >= g.rows) continue;
          for (Index dw = 0; dw < g.kw; ++dw) {
            const Index sb = b + dw - rw;
            if (sb < 0 || sb >= g.cols) continue;
            double* dst = plane + (sa * g.cols + sb) * g.in_ch;
            const double* src = row + (dh * g.kw + dw) * g.in_ch;
            for (Index c = 0; c < g.in_ch; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

Shape conv_output_shape(const Tensor& input, Index out_ch) {
  Shape s = input.shape();
  s[s.rank() - 1] = out_ch;
  return s;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  const ConvGeometry g = check_conv(input, kernel, bias);
  const Shape out_shape = conv_output_shape(input, g.out_ch);
  Tensor out(out_shape, Tensor::Vector(out_shape.numel()));
  MatrixMap out_m(out.data(), g.positions(), g.out_ch);
  ConstMatrixMap k_m(kernel.data(), g.patch(), g.out_ch);
  if (g.kh == 1 && g.kw == 1) {
    out_m.noalias() = ConstMatrixMap(input.data(), g.positions(), g.in_ch) * k_m;
  } else {
    out_m.noalias() = im2col(input.data(), g) * k_m;
  }
  if (!bias.empty()) out_m.rowwise() += bias.vec().transpose();
  return out;
}

void conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out, Tensor* grad_input,
                     Tensor* grad_kernel, Tensor* grad_bias) {
  const ConvGeometry g = check_conv(input, kernel, {});
  ConstMatrixMap go(grad_out.data(), g.positions(), g.out_ch);
  ConstMatrixMap k_m(kernel.data(), g.patch(), g.out_ch);
  const bool pointwise = g.kh == 1 && g.kw == 1;
  if (grad_kernel) {
    MatrixMap gk(grad_kernel->data(), g.patch(), g.out_ch);
    if (pointwise)
      gk.noalias() += ConstMatrixMap(input.data(), g.positions(), g.in_ch).transpose() * go;
    else
      gk.noalias() += im2col(input.data(), g).transpose() * go;
  }
  if (grad_bias) grad_bias->vec() += go.colwise().sum().transpose();
  if (grad_input) {
    if (pointwise) {
      MatrixMap gi(grad_input->data(), g.positions(), g.in_ch);
      gi.noalias() += go * k_m.transpose();
    } else {
      RowMatrix gcols = go * k_m.transpose();
      col2im_add(gcols, grad_input->data(), g);
    }
  }
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw ShapeError("linear weight must be [Cin, Cout], got " + weight.shape().str());
  return conv2d(input.reshaped(input.rank() >= 3 ? input.shape() : input.shape().with_inserted(0, 1).with_inserted(0, 1)),
                weight.reshaped(Shape{1, 1, weight.dim(0), weight.dim(1)}), bias)
      .reshaped(conv_output_shape(input, weight.dim(1)));
}

}  // namespace cvp
