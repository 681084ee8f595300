#include "contextvp/autodiff.hpp"

#include <cmath>

namespace cvp {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Var Tape::parameter(const std::shared_ptr<Tensor>& p) {
  if (!p) throw Error("null parameter tensor");
  if (auto it = params_.find(p.get()); it != params_.end()) return Var(this, it->second);
  Var v = variable(*p);
  params_.emplace(p.get(), v.id());
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw Error("operands belong to different tapes");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || requires_grad(in.id());
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw Error("loss node belongs to a different tape");
  if (loss.value().size() != 1)
    throw ShapeError("backward seed must be a scalar, got shape " + loss.shape().str());
  grads_.assign(nodes_.size(), Tensor());
  grads_[static_cast<std::size_t>(loss.id())] = Tensor::constant(loss.shape(), 1.0);
  for (NodeId id = loss.id(); id >= 0; --id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty() || node.leaf || !node.backward) continue;
    BackwardContext ctx(*this, id);
    node.backward(ctx);
    g = Tensor();  // interior grads are not retained
  }
}

Tensor Tape::grad(Var v) const {
  const auto id = static_cast<std::size_t>(v.id());
  if (id < grads_.size() && !grads_[id].empty()) return grads_[id];
  return Tensor::zeros(v.shape());
}

Tensor Tape::grad(const std::shared_ptr<Tensor>& p) const { return grad(p.get()); }

Tensor Tape::grad(const Tensor* p) const {
  auto it = params_.find(p);
  if (it == params_.end()) return Tensor::zeros(p->shape());
  return grad(Var(const_cast<Tape*>(this), it->second));
}

Tensor& BackwardContext::input_grad(std::size_t k) {
  const auto id = static_cast<std::size_t>(input_id(k));
  Tensor& g = tape_.grads_[id];
  if (g.empty()) g = Tensor::zeros(tape_.value(static_cast<NodeId>(id)).shape());
  return g;
}

// ---------------------------------------------------------------------------

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
  }
  return "identity";
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

}  // namespace

Var conv2d(Var input, Var kernel) {
  Tensor out = conv2d(input.value(), kernel.value());
  return input.tape().record(std::move(out), {input, kernel}, [](BackwardContext& ctx) {
    conv2d_backward(ctx.input(0), ctx.input(1), ctx.grad_out(), ctx.needs_grad(0) ? &ctx.input_grad(0) : nullptr,
                    ctx.needs_grad(1) ? &ctx.input_grad(1) : nullptr, nullptr);
  });
}

Var conv2d(Var input, Var kernel, Var bias) {
  Tensor out = conv2d(input.value(), kernel.value(), bias.value());
  return input.tape().record(std::move(out), {input, kernel, bias}, [](BackwardContext& ctx) {
    conv2d_backward(ctx.input(0), ctx.input(1), ctx.grad_out(), ctx.needs_grad(0) ? &ctx.input_grad(0) : nullptr,
                    ctx.needs_grad(1) ? &ctx.input_grad(1) : nullptr,
                    ctx.needs_grad(2) ? &ctx.input_grad(2) : nullptr);
  });
}

Var linear(Var input, Var weight, Var bias) {
  if (weight.shape().rank() != 2) throw ShapeError("linear weight must be [Cin, Cout], got " + weight.shape().str());
  if (input.shape()[input.shape().rank() - 1] != weight.shape()[0])
    throw ShapeError("linear channel mismatch: input " + input.shape().str() + " vs weight " + weight.shape().str());
  Tensor out = linear(input.value(), weight.value(), bias.value());
  return input.tape().record(std::move(out), {input, weight, bias}, [](BackwardContext& ctx) {
    const Tensor& x = ctx.input(0);
    const Tensor& w = ctx.input(1);
    const auto x_m = x.matrix();
    const auto go = ctx.grad_out().matrix();
    if (ctx.needs_grad(0)) ctx.input_grad(0).matrix().noalias() += go * w.matrix().transpose();
    if (ctx.needs_grad(1)) ctx.input_grad(1).matrix().noalias() += x_m.transpose() * go;
    if (ctx.needs_grad(2)) ctx.input_grad(2).vec() += go.colwise().sum().transpose();
  });
}

Var sigmoid(Var x) {
  Tensor out(x.shape());
  out.array() = 1.0 / (1.0 + (-x.value().array()).exp());
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    const auto y = ctx.output().array();
    ctx.input_grad(0).array() += ctx.grad_out().array() * y * (1.0 - y);
  });
}

Var tanh(Var x) {
  Tensor out(x.shape());
  out.array() = x.value().array().tanh();
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    const auto y = ctx.output().array();
    ctx.input_grad(0).array() += ctx.grad_out().array() * (1.0 - y * y);
  });
}

Var activation(Var x, Activation kind) {
  switch (kind) {
    case Activation::Identity: return x;
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Tanh: return tanh(x);
    case Activation::Relu: {
      Tensor out(x.shape());
      out.array() = x.value().array().max(0.0);
      return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
        ctx.input_grad(0).array() += (ctx.input(0).array() > 0.0).select(ctx.grad_out().array(), 0.0);
      });
    }
  }
  return x;
}

Var abs(Var x) {
  Tensor out(x.shape());
  out.array() = x.value().array().abs();
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    const auto xi = ctx.input(0).array();
    ctx.input_grad(0).array() += ctx.grad_out().array() * ((xi > 0.0).cast<double>() - (xi < 0.0).cast<double>());
  });
}

Var square(Var x) {
  Tensor out(x.shape());
  out.array() = x.value().array().square();
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    ctx.input_grad(0).array() += 2.0 * ctx.grad_out().array() * ctx.input(0).array();
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape(), a.value().vec() + b.value().vec());
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    if (ctx.needs_grad(0)) ctx.input_grad(0).vec() += ctx.grad_out().vec();
    if (ctx.needs_grad(1)) ctx.input_grad(1).vec() += ctx.grad_out().vec();
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape(), a.value().vec() - b.value().vec());
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    if (ctx.needs_grad(0)) ctx.input_grad(0).vec() += ctx.grad_out().vec();
    if (ctx.needs_grad(1)) ctx.input_grad(1).vec() -= ctx.grad_out().vec();
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  out.array() = a.value().array() * b.value().array();
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    if (ctx.needs_grad(0)) ctx.input_grad(0).array() += ctx.grad_out().array() * ctx.input(1).array();
    if (ctx.needs_grad(1)) ctx.input_grad(1).array() += ctx.grad_out().array() * ctx.input(0).array();
  });
}

Var scale(Var x, double factor) {
  Tensor out(x.shape(), x.value().vec() * factor);
  return x.tape().record(std::move(out), {x}, [factor](BackwardContext& ctx) {
    ctx.input_grad(0).vec() += factor * ctx.grad_out().vec();
  });
}

Var neg(Var x) { return scale(x, -1.0); }

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }
Var operator-(Var x) { return neg(x); }
Var operator*(double factor, Var x) { return scale(x, factor); }

Var sum(Var x) {
  Tensor out = Tensor::scalar(x.value().vec().sum());
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    ctx.input_grad(0).array() += ctx.grad_out().item();
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value());
  Tensor out = concat(std::span<const Tensor>(values), axis);
  const int a = detail::normalize_axis(axis, out.rank());
  std::vector<Index> bounds{0};
  for (const Var& p : parts) bounds.push_back(bounds.back() + p.shape()[a]);
  return parts[0].tape().record(std::move(out), parts, [a, bounds](BackwardContext& ctx) {
    for (std::size_t k = 0; k + 1 < bounds.size(); ++k)
      if (ctx.needs_grad(k)) ctx.input_grad(k).vec() += slice(ctx.grad_out(), a, bounds[k], bounds[k + 1]).vec();
  });
}

Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var x, int axis, Index begin, Index end) {
  Tensor out = slice(x.value(), axis, begin, end);
  const int a = detail::normalize_axis(axis, x.shape().rank());
  return x.tape().record(std::move(out), {x}, [a, begin](BackwardContext& ctx) {
    Tensor& g = ctx.input_grad(0);
    const Tensor& go = ctx.grad_out();
    const Index n = g.dim(a), len = go.dim(a);
    const Index outer = g.shape().outer(a), inner = g.shape().inner(a);
    for (Index o = 0; o < outer; ++o) {
      double* dst = g.data() + (o * n + begin) * inner;
      const double* src = go.data() + o * len * inner;
      for (Index k = 0; k < len * inner; ++k) dst[k] += src[k];
    }
  });
}

Var take(Var x, int axis, Index index) {
  const int a = detail::normalize_axis(axis, x.shape().rank());
  return reshape(slice(x, a, index, index + 1), x.shape().without(a));
}

Var stack(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  const Shape base = parts[0].shape();
  const int a = axis < 0 ? axis + base.rank() + 1 : axis;
  std::vector<Var> expanded;
  expanded.reserve(parts.size());
  for (const Var& p : parts) {
    if (!(p.shape() == base)) throw ShapeError("stack shape mismatch: " + p.shape().str() + " vs " + base.str());
    expanded.push_back(reshape(p, base.with_inserted(a, 1)));
  }
  return concat(std::span<const Var>(expanded), a);
}

Var permute(Var x, std::span<const int> perm) {
  Tensor out = permute(x.value(), perm);
  std::vector<int> inv = inverse_permutation(perm);
  return x.tape().record(std::move(out), {x}, [inv](BackwardContext& ctx) {
    ctx.input_grad(0).vec() += permute(ctx.grad_out(), std::span<const int>(inv)).vec();
  });
}

Var reshape(Var x, const Shape& shape) {
  Tensor out = x.value().reshaped(shape);
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    ctx.input_grad(0).vec() += ctx.grad_out().vec();
  });
}

Var layer_norm(Var x, double eps) {
  const Tensor& xv = x.value();
  const auto xm = xv.matrix();
  const Index n = xm.cols();
  Tensor out(x.shape());
  Eigen::VectorXd inv_std(xm.rows());
  auto om = out.matrix();
  for (Index r = 0; r < xm.rows(); ++r) {
    const double mean = xm.row(r).mean();
    const double var = (xm.row(r).array() - mean).square().sum() / static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    om.row(r) = (xm.row(r).array() - mean) * inv_std[r];
  }
  return x.tape().record(std::move(out), {x}, [inv_std, n](BackwardContext& ctx) {
    const auto y = ctx.output().matrix();
    const auto go = ctx.grad_out().matrix();
    auto gi = ctx.input_grad(0).matrix();
    for (Index r = 0; r < y.rows(); ++r) {
      const double mean_g = go.row(r).mean();
      const double mean_gy = go.row(r).dot(y.row(r)) / static_cast<double>(n);
      gi.row(r).array() += inv_std[r] * (go.row(r).array() - mean_g - y.row(r).array() * mean_gy);
    }
  });
}

}  // namespace cvp
