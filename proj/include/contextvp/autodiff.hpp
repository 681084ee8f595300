#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "contextvp/tensor.hpp"

namespace cvp {

using NodeId = std::int32_t;

class Tape;
class BackwardContext;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = -1;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Append-only record of a forward computation; `backward` replays it in
/// reverse insertion order.
///
/// One tape is single-threaded. Independent tapes may run concurrently.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Leaf bound to a parameter tensor. Registering the same tensor twice
  /// returns the same node, so aliased (tied) parameters accumulate one grad.
  Var parameter(const std::shared_ptr<Tensor>& p);

  /// Adds an op node. `fn` is kept only when some input requires grad.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  /// Reverse-mode sweep seeded with d(loss)/d(loss) = 1. `loss` must be scalar.
  void backward(Var loss);

  const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// d(loss)/d(v) after backward; zeros if v did not influence the loss.
  Tensor grad(Var v) const;
  Tensor grad(const std::shared_ptr<Tensor>& p) const;
  Tensor grad(const Tensor* p) const;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class BackwardContext;

  struct Node {
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<const Tensor*, NodeId> params_;
  bool grad_enabled_;
};

/// View handed to an op's backward function.
class BackwardContext {
 public:
  BackwardContext(Tape& tape, NodeId node) : tape_(tape), node_(node) {}

  const Tensor& grad_out() const { return tape_.grads_[static_cast<std::size_t>(node_)]; }
  const Tensor& output() const { return tape_.value(node_); }
  const Tensor& input(std::size_t k) const { return tape_.value(input_id(k)); }
  bool needs_grad(std::size_t k) const { return tape_.requires_grad(input_id(k)); }

  /// Accumulator for input k, zero-initialized on first use.
  Tensor& input_grad(std::size_t k);

 private:
  NodeId input_id(std::size_t k) const { return tape_.nodes_[static_cast<std::size_t>(node_)].inputs[k]; }

  Tape& tape_;
  NodeId node_;
};

// ---------------------------------------------------------------------------
// Differentiable operations.

enum class Activation { Identity, Sigmoid, Tanh, Relu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

Var conv2d(Var input, Var kernel);
Var conv2d(Var input, Var kernel, Var bias);
Var linear(Var input, Var weight, Var bias);

Var activation(Var x, Activation kind);
Var sigmoid(Var x);
Var tanh(Var x);
Var abs(Var x);     // subgradient 0 at 0
Var square(Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var x);
Var scale(Var x, double factor);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator-(Var x);
Var operator*(double factor, Var x);

Var sum(Var x);  // -> scalar

Var concat(std::span<const Var> parts, int axis);
Var concat(std::initializer_list<Var> parts, int axis);
Var slice(Var x, int axis, Index begin, Index end);
Var take(Var x, int axis, Index index);
Var stack(std::span<const Var> parts, int axis);
Var permute(Var x, std::span<const int> perm);
Var reshape(Var x, const Shape& shape);

/// Normalizes each position across its last axis (zero mean, unit variance).
Var layer_norm(Var x, double eps = 1e-5);

}  // namespace cvp
