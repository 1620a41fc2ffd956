#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dto/tensor.hpp"

namespace dto {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Moment buffers for Adam, one pair per parameter in registration order.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// Throws ErrorKind::numeric naming the parameter if a gradient is not finite.
void adam_step(std::span<NamedTensor> params, AdamState& state, double lr);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<NamedTensor> params, double max_norm);

void zero_grads(std::span<NamedTensor> params);

/// Glorot-uniform samples in +-sqrt(6 / (fan_in + fan_out)) for a
/// (fan_in, fan_out) shape, as a trainable parameter.
Tensor xavier_init(const Shape& shape, std::uint64_t seed);

}  // namespace dto
