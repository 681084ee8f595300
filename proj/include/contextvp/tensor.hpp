#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "contextvp/error.hpp"

namespace cvp {

using Index = Eigen::Index;

inline constexpr int kMaxRank = 5;

/// Extents of a dense row-major array, rank 0..5.
class Shape {
 public:
  Shape() = default;

  Shape(std::initializer_list<Index> extents) {
    for (Index e : extents) push_back(e);
  }

  template <typename It>
  Shape(It first, It last) {
    for (; first != last; ++first) push_back(static_cast<Index>(*first));
  }

  int rank() const noexcept { return rank_; }
  Index operator[](int axis) const { return extents_[static_cast<std::size_t>(axis)]; }
  Index& operator[](int axis) { return extents_[static_cast<std::size_t>(axis)]; }

  const Index* begin() const noexcept { return extents_.data(); }
  const Index* end() const noexcept { return extents_.data() + rank_; }

  Index numel() const noexcept {
    Index n = 1;
    for (int i = 0; i < rank_; ++i) n *= extents_[static_cast<std::size_t>(i)];
    return n;
  }

  void push_back(Index extent) {
    if (rank_ == kMaxRank) throw ShapeError("tensor rank exceeds " + std::to_string(kMaxRank));
    if (extent < 0) throw ShapeError("negative extent " + std::to_string(extent));
    extents_[static_cast<std::size_t>(rank_++)] = extent;
  }

  /// Shape with `axis` removed.
  Shape without(int axis) const {
    Shape out;
    for (int i = 0; i < rank_; ++i)
      if (i != axis) out.push_back((*this)[i]);
    return out;
  }

  /// Shape with `extent` inserted before position `axis`.
  Shape with_inserted(int axis, Index extent) const {
    Shape out;
    for (int i = 0; i <= rank_; ++i) {
      if (i == axis) out.push_back(extent);
      if (i < rank_) out.push_back((*this)[i]);
    }
    return out;
  }

  /// Product of extents before / after `axis`.
  Index outer(int axis) const {
    Index n = 1;
    for (int i = 0; i < axis; ++i) n *= (*this)[i];
    return n;
  }
  Index inner(int axis) const {
    Index n = 1;
    for (int i = axis + 1; i < rank_; ++i) n *= (*this)[i];
    return n;
  }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += "x";
      s += std::to_string((*this)[i]);
    }
    return s + "]";
  }

  friend bool operator==(const Shape& a, const Shape& b) {
    return a.rank_ == b.rank_ && std::equal(a.begin(), a.end(), b.begin());
  }

 private:
  std::array<Index, kMaxRank> extents_{};
  int rank_ = 0;
};

/// Dense row-major array of `Scalar` with an Eigen vector as storage.
///
/// A default-constructed tensor is the null tensor (`empty()`); every other
/// tensor satisfies `shape().numel() == size()`.
template <typename Scalar_>
class BasicTensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMajorMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;

  BasicTensor() = default;

  explicit BasicTensor(const Shape& shape) : shape_(shape), data_(Vector::Zero(shape.numel())) {}

  BasicTensor(const Shape& shape, Vector data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
  }

  BasicTensor(const Shape& shape, std::initializer_list<Scalar> values)
      : BasicTensor(shape, Eigen::Map<const Vector>(values.begin(), static_cast<Index>(values.size()))) {}

  static BasicTensor zeros(const Shape& shape) { return BasicTensor(shape); }
  static BasicTensor constant(const Shape& shape, Scalar v) {
    return BasicTensor(shape, Vector::Constant(shape.numel(), v));
  }
  static BasicTensor scalar(Scalar v) { return BasicTensor(Shape{}, Vector::Constant(1, v)); }

  bool empty() const noexcept { return data_.size() == 0; }
  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return shape_.rank(); }
  Index dim(int axis) const { return shape_[axis < 0 ? axis + rank() : axis]; }
  Index size() const noexcept { return data_.size(); }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  Vector& vec() noexcept { return data_; }
  const Vector& vec() const noexcept { return data_; }
  auto array() noexcept { return data_.array(); }
  auto array() const noexcept { return data_.array(); }

  /// View as a [rows x last-extent] row-major matrix.
  MatrixMap matrix() { return MatrixMap(data(), size() / std::max<Index>(dim(-1), 1), dim(-1)); }
  ConstMatrixMap matrix() const {
    return ConstMatrixMap(data(), size() / std::max<Index>(dim(-1), 1), dim(-1));
  }

  template <typename... Idx>
  Scalar& operator()(Idx... idx) {
    return data_[offset({static_cast<Index>(idx)...})];
  }
  template <typename... Idx>
  Scalar operator()(Idx... idx) const {
    return data_[offset({static_cast<Index>(idx)...})];
  }

  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
    return data_[0];
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  BasicTensor reshaped(const Shape& shape) const {
    if (shape.numel() != size())
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    return BasicTensor(shape, data_);
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Index offset(std::initializer_list<Index> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw ShapeError("index rank " + std::to_string(idx.size()) + " on tensor " + shape_.str());
    Index off = 0;
    int axis = 0;
    for (Index i : idx) {
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  Vector data_;
  bool requires_grad_ = false;
};

using Tensor = BasicTensor<double>;

/// A parameter tensor and its stable name.
struct NamedTensor {
  std::string name;
  std::shared_ptr<Tensor> tensor;
};

// ---------------------------------------------------------------------------
// Layout operations on plain tensors. These copy; autodiff wrappers live in
// autodiff.hpp.

namespace detail {
inline int normalize_axis(int axis, int rank) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return a;
}
}  // namespace detail

/// Elements [begin, end) along `axis`.
template <typename S>
BasicTensor<S> slice(const BasicTensor<S>& t, int axis, Index begin, Index end) {
  axis = detail::normalize_axis(axis, t.rank());
  const Index n = t.dim(axis);
  if (begin < 0 || end > n || begin > end)
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range on axis " +
                     std::to_string(axis) + " of " + t.shape().str());
  Shape out_shape = t.shape();
  out_shape[axis] = end - begin;
  BasicTensor<S> out(out_shape);
  const Index outer = t.shape().outer(axis), inner = t.shape().inner(axis);
  const Index len = (end - begin) * inner;
  for (Index o = 0; o < outer; ++o)
    std::copy_n(t.data() + (o * n + begin) * inner, len, out.data() + o * len);
  return out;
}

/// Plane `index` along `axis`; the axis is dropped.
template <typename S>
BasicTensor<S> take(const BasicTensor<S>& t, int axis, Index index) {
  axis = detail::normalize_axis(axis, t.rank());
  return slice(t, axis, index, index + 1).reshaped(t.shape().without(axis));
}

/// Concatenate along an existing axis; operand order is preserved.
template <typename S>
BasicTensor<S> concat(std::span<const BasicTensor<S>> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const int rank = parts[0].rank();
  axis = detail::normalize_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat rank mismatch: " + p.shape().str() + " vs " + out_shape.str());
    for (int a = 0; a < rank; ++a)
      if (a != axis && p.dim(a) != out_shape[a])
        throw ShapeError("concat extent mismatch on axis " + std::to_string(a) + ": " + p.shape().str() + " vs " +
                         out_shape.str());
    total += p.dim(axis);
  }
  out_shape[axis] = total;
  BasicTensor<S> out(out_shape);
  const Index outer = out_shape.outer(axis), inner = out_shape.inner(axis);
  Index offset = 0;
  for (const auto& p : parts) {
    const Index len = p.dim(axis) * inner;
    for (Index o = 0; o < outer; ++o)
      std::copy_n(p.data() + o * len, len, out.data() + (o * total * inner) + offset);
    offset += len;
  }
  return out;
}

/// Stack equally shaped tensors along a new axis.
template <typename S>
BasicTensor<S> stack(std::span<const BasicTensor<S>> parts, int axis) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  const Shape& base = parts[0].shape();
  const int a = axis < 0 ? axis + base.rank() + 1 : axis;
  std::vector<BasicTensor<S>> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    if (!(p.shape() == base)) throw ShapeError("stack shape mismatch: " + p.shape().str() + " vs " + base.str());
    expanded.push_back(p.reshaped(base.with_inserted(a, 1)));
  }
  return concat(std::span<const BasicTensor<S>>(expanded), a);
}

/// Axis permutation: out axis i is input axis perm[i].
template <typename S>
BasicTensor<S> permute(const BasicTensor<S>& t, std::span<const int> perm) {
  const int rank = t.rank();
  if (static_cast<int>(perm.size()) != rank) throw ShapeError("permutation rank mismatch on " + t.shape().str());
  std::array<Index, kMaxRank> in_stride{};
  {
    Index s = 1;
    for (int a = rank - 1; a >= 0; --a) {
      in_stride[static_cast<std::size_t>(a)] = s;
      s *= t.dim(a);
    }
  }
  Shape out_shape;
  std::array<Index, kMaxRank> stride{};
  for (int i = 0; i < rank; ++i) {
    out_shape.push_back(t.dim(perm[static_cast<std::size_t>(i)]));
    stride[static_cast<std::size_t>(i)] = in_stride[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  BasicTensor<S> out(out_shape);
  if (out.size() == 0) return out;
  std::array<Index, kMaxRank> idx{};
  Index src = 0;
  for (Index k = 0; k < out.size(); ++k) {
    out.data()[k] = t.data()[src];
    for (int a = rank - 1; a >= 0; --a) {
      const auto ua = static_cast<std::size_t>(a);
      src += stride[ua];
      if (++idx[ua] < out_shape[a]) break;
      src -= stride[ua] * out_shape[a];
      idx[ua] = 0;
    }
  }
  return out;
}

inline std::vector<int> inverse_permutation(std::span<const int> perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

// ---------------------------------------------------------------------------
// Numeric kernels (double only). Implemented in kernels.cpp.

/// "Same" zero-padded, stride-1 2-D convolution over the last three axes.
///
/// `input` is [..., A, B, Cin] (leading axes are batch), `kernel` is
/// [kh, kw, Cin, Cout] with odd kh, kw, `bias` is [Cout] or empty.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias = {});

/// Gradients of conv2d given dL/dout.
void conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out, Tensor* grad_input,
                     Tensor* grad_kernel, Tensor* grad_bias);

/// Pointwise channel map: [..., Cin] x [Cin, Cout] + [Cout].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias = {});

}  // namespace cvp
