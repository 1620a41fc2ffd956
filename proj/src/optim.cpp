#include "dto/optim.hpp"

#include <cmath>

#include "dto/error.hpp"
#include "dto/rng.hpp"

namespace dto {

void adam_step(std::span<NamedTensor> params, AdamState& state, double lr) {
  if (!(lr >= 0.0)) throw Error(ErrorKind::config, "adam: learning rate must be >= 0");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor.numel(), 0.0);
      state.v[i].assign(params[i].tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw Error(ErrorKind::dimension, "adam: parameter count changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].tensor.numel()) {
      throw Error(ErrorKind::dimension, "adam: moment shape mismatch for " + params[i].name);
    }
    for (double g : params[i].tensor.grad()) {
      if (!std::isfinite(g)) {
        throw Error(ErrorKind::numeric, "adam: non-finite gradient in parameter " +
                                            params[i].name);
      }
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].tensor.mutable_values();
    const auto grad = params[i].tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      values[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double clip_grad_norm(std::span<NamedTensor> params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double k = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.tensor.mutable_grad()) g *= k;
  }
  return norm;
}

void zero_grads(std::span<NamedTensor> params) {
  for (auto& p : params) p.tensor.zero_grad();
}

Tensor xavier_init(const Shape& shape, std::uint64_t seed) {
  if (shape.size() != 2) {
    throw Error(ErrorKind::dimension, "xavier_init expects (fan_in, fan_out), got " +
                                          shape_str(shape));
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
  Rng rng(seed);
  std::vector<double> values(numel_of(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return Tensor::parameter(shape, std::move(values));
}

}  // namespace dto
