#include "contextvp/optim.hpp"

#include <cmath>

namespace cvp {

AdamState make_adam(const std::vector<NamedTensor>& params, double base_lr) {
  AdamState s;
  s.base_lr = base_lr;
  s.lr = base_lr;
  for (const auto& p : params) {
    s.m.push_back(Tensor::zeros(p.tensor->shape()));
    s.v.push_back(Tensor::zeros(p.tensor->shape()));
  }
  return s;
}

double lr_schedule(const AdamState& state, int epoch) {
  if (epoch < 0) throw ConfigError("epoch must be non-negative");
  return state.base_lr * std::pow(state.decay, epoch / state.decay_every);
}

void adam_step(AdamState& state, const std::vector<NamedTensor>& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ShapeError("adam_step: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!(grads[k].shape() == params[k].tensor->shape()))
      throw ShapeError("adam_step: gradient shape mismatch for " + params[k].name);
    if (!grads[k].all_finite()) throw NumericError("non-finite gradient for parameter " + params[k].name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto g = grads[k].array();
    auto m = state.m[k].array();
    auto v = state.v[k].array();
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.square();
    params[k].tensor->array() -= state.lr * (m / c1) / ((v / c2).sqrt() + state.eps);
  }
}

double xavier_limit(const Shape& shape) {
  double fan_in = 0.0, fan_out = 0.0;
  if (shape.rank() == 4) {
    const double area = static_cast<double>(shape[0] * shape[1]);
    fan_in = area * static_cast<double>(shape[2]);
    fan_out = area * static_cast<double>(shape[3]);
  } else if (shape.rank() == 2) {
    fan_in = static_cast<double>(shape[0]);
    fan_out = static_cast<double>(shape[1]);
  } else {
    throw ShapeError("xavier init expects a kernel or matrix, got " + shape.str());
  }
  return std::sqrt(6.0 / (fan_in + fan_out));
}

void xavier_uniform(Tensor& t, SplitMix64& rng) {
  const double limit = xavier_limit(t.shape());
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-limit, limit);
}

}  // namespace cvp
