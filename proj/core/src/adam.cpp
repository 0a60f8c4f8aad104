// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "psnas/adam.hpp"

#include <cmath>
#include <string>

#include "psnas/error.hpp"

namespace psnas::opt {

template <typename T>
AdamState<T>::AdamState(const AdamConfig& cfg, std::span<const ad::Tensor<T>> params) : config(cfg) {
  m.reserve(params.size());
  v.reserve(params.size());
  for (const auto& p : params) {
    m.emplace_back(p.numel(), T(0));
    v.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void adam_step(std::span<ad::Tensor<T>> params, std::span<const std::vector<T>> grads, AdamState<T>& state) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                     " grads, " + std::to_string(state.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].empty() && grads[i].size() != params[i].numel()) {
      throw ShapeError("adam_step: gradient " + std::to_string(i) + " has the wrong size");
    }
    if (state.m[i].size() != params[i].numel()) throw ShapeError("adam_step: moment shape mismatch");
    for (T g : grads[i]) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T wd = static_cast<T>(c.weight_decay);
  const T step_size = static_cast<T>(c.lr / bc1);
  const T sqrt_bc2 = static_cast<T>(std::sqrt(bc2));
  const T eps = static_cast<T>(c.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has = !grads[i].empty();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const T g = (has ? grads[i][k] : T(0)) + wd * w[k];
      m[k] = b1 * m[k] + (T(1) - b1) * g;
      v[k] = b2 * v[k] + (T(1) - b2) * g * g;
      w[k] -= step_size * m[k] / (std::sqrt(v[k]) / sqrt_bc2 + eps);
    }
  }
}

template <typename T>
void adam_step(std::span<ad::Tensor<T>> params, AdamState<T>& state) {
  std::vector<std::vector<T>> grads(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].has_grad()) grads[i].assign(params[i].grad().begin(), params[i].grad().end());
  }
  adam_step<T>(params, grads, state);
}

#define PSNAS_INSTANTIATE_ADAM(T)                                                                    \
  template struct AdamState<T>;                                                                     \
  template void adam_step<T>(std::span<ad::Tensor<T>>, AdamState<T>&);                              \
  template void adam_step<T>(std::span<ad::Tensor<T>>, std::span<const std::vector<T>>, AdamState<T>&);

PSNAS_INSTANTIATE_ADAM(float)
PSNAS_INSTANTIATE_ADAM(double)

}  // namespace psnas::opt
