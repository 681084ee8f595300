#pragma once

#include <cstdint>
#include <vector>

#include "contextvp/gradcheck.hpp"
#include "contextvp/random.hpp"

namespace cvp {

/// Adam moments plus the step-decay learning-rate schedule.
struct AdamState {
  double base_lr = 1e-3;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay = 0.99;
  int decay_every = 5;
  std::int64_t step = 0;
  int epoch = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

AdamState make_adam(const std::vector<NamedTensor>& params, double base_lr = 1e-3);

/// lr = base_lr * decay^floor(epoch / decay_every)
double lr_schedule(const AdamState& state, int epoch);

/// One bias-corrected Adam update using `state.lr`. Throws NumericError
/// naming the first parameter with a non-finite gradient; nothing is
/// modified in that case.
void adam_step(AdamState& state, const std::vector<NamedTensor>& params, const std::vector<Tensor>& grads);

/// Glorot/Xavier normalized (uniform) initialization.
///
/// Kernels [k, k, Cin, Cout] use fan_in = k*k*Cin, fan_out = k*k*Cout;
/// matrices [Cin, Cout] use Cin and Cout.
void xavier_uniform(Tensor& t, SplitMix64& rng);
double xavier_limit(const Shape& shape);

}  // namespace cvp
