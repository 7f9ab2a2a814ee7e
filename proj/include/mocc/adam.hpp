#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mocc/errors.hpp"
#include "mocc/tensor.hpp"

namespace mocc {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3; // coupled L2: added to the gradient
};

template <typename T> struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;
};

// One Adam step with coupled weight decay over a list of parameters.
// State tensors are created lazily on the first step.
template <typename T>
void adam_step(std::span<Tensor<T> *const> params, std::span<const Tensor<T>> grads,
               AdamState<T> &state, const AdamOptions &options) {
  if (!(options.lr > 0.0))
    throw ParameterError("adam_step: learning rate must be positive");
  if (params.size() != grads.size())
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k]->require_same_shape(grads[k], "adam_step");
    if (!grads[k].all_finite())
      throw NumericError("adam_step: non-finite gradient for parameter " + std::to_string(k));
  }
  if (state.m.empty()) {
    for (const auto *p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  } else if (state.m.size() != params.size()) {
    throw StateError("adam_step: optimizer state was built for a different parameter list");
  }

  ++state.t;
  const double b1 = options.beta1, b2 = options.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T> &theta = *params[k];
    Tensor<T> &m = state.m[k];
    Tensor<T> &v = state.v[k];
    const Tensor<T> &g = grads[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double geff = static_cast<double>(g[i]) +
                          options.weight_decay * static_cast<double>(theta[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * geff;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * geff * geff;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) -
                                options.lr * m_hat / (std::sqrt(v_hat) + options.eps));
    }
  }
}

} // namespace mocc
