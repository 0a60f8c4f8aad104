// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_ADAM_HPP_
#define PSNAS_ADAM_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "psnas/tensor.hpp"

namespace psnas::opt {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0;
};

/// Moments for an ordered parameter list.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  AdamState() = default;
  AdamState(const AdamConfig& cfg, std::span<const ad::Tensor<T>> params);
};

/// g <- grad + wd * param, then the bias-corrected Adam update. Parameters
/// without a gradient buffer are treated as having zero gradient. Throws
/// NumericError, leaving everything untouched, if any gradient is
/// non-finite.
template <typename T>
void adam_step(std::span<ad::Tensor<T>> params, AdamState<T>& state);

/// Same update with gradients supplied explicitly (one vector per param).
template <typename T>
void adam_step(std::span<ad::Tensor<T>> params, std::span<const std::vector<T>> grads, AdamState<T>& state);

}  // namespace psnas::opt

#endif  // PSNAS_ADAM_HPP_
