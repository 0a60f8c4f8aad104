// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_OPS_HPP_
#define PSNAS_OPS_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "psnas/tensor.hpp"

// Differentiable primitives. Each op computes its forward value eagerly and,
// when the record is recording and some input tracks gradients, appends its
// backward step to the record. Image tensors are laid out [B,C,H,W].
namespace psnas::ad {

// ---- elementwise and reductions ----

template <typename T> Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor);
template <typename T> Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x);
template <typename T> Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);
template <typename T> Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x);

/// a[M,K] * b[K,N].
template <typename T> Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

/// x[B,I] * weight[O,I]^T + bias[O]. bias may be undefined.
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// ---- convolution ----

/// Dense 2-D convolution, kernel [Cout,Cin,k,k]. k must be odd.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernel, int stride, int padding);

/// Per-channel convolution, kernel [C,1,k,k].
template <typename T>
Tensor<T> depthwise_conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernel, int stride,
                           int padding);

/// Adds bias[C] to every pixel of channel c.
template <typename T> Tensor<T> add_channel_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias);

// ---- normalization ----

enum class BnMode {
  kTrain,         // batch statistics, running statistics updated
  kEval,          // running statistics
  kTrainNoUpdate  // batch statistics, running statistics untouched
};

template <typename T>
struct BatchNormBuffers {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

/// Per-channel normalization over B,H,W. gamma and beta may be undefined
/// (no affine transform).
template <typename T>
Tensor<T> batch_norm2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormBuffers<T>& buffers, BnMode mode, T eps = T(kBnEps),
                       T momentum = T(kBnMomentum));

/// Divides each per-pixel 3-vector by max(norm, eps).
template <typename T> Tensor<T> l2_normalize_channels(Tape<T>& tape, const Tensor<T>& x, T eps);

// ---- structure ----

template <typename T> Tensor<T> concat_channels(Tape<T>& tape, std::span<const Tensor<T>> xs);
template <typename T>
Tensor<T> slice_channels(Tape<T>& tape, const Tensor<T>& x, std::size_t start, std::size_t count);

/// Elementwise max over each group of n = B/groups consecutive batch
/// entries: [groups*n,C,H,W] -> [groups,C,H,W]. Ties route the gradient to
/// the lowest index in the group.
template <typename T> Tensor<T> reduce_max_over_set(Tape<T>& tape, const Tensor<T>& x, std::size_t groups);

/// Repeats each batch entry n times: [G,...] -> [G*n,...].
template <typename T> Tensor<T> repeat_batch(Tape<T>& tape, const Tensor<T>& x, std::size_t n);

/// [B,C,H,W] -> [B,C].
template <typename T> Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x);

/// Bilinear resize with half-pixel centers (align_corners = false).
template <typename T>
Tensor<T> upsample_bilinear(Tape<T>& tape, const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

// ---- relaxation ----

/// Row-wise softmax of x[R,K].
template <typename T> Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x);

/// sum_k weights[row,k] * candidates[k]. Undefined candidates contribute
/// zero (the "zero" operation); at least one candidate must be defined.
template <typename T>
Tensor<T> mix(Tape<T>& tape, std::span<const Tensor<T>> candidates, const Tensor<T>& weights, std::size_t row);

// ---- losses ----

/// Mean over the batch of -log softmax(logits)[target].
template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> targets);

/// (1/m) sum over masked pixels of (1 - <pred, truth>). pred and truth are
/// [B,3,H,W]; mask is [B,1,H,W] or [1,1,H,W] with values 0/1. truth and
/// mask are constants.
template <typename T>
Tensor<T> cosine_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& truth, const Tensor<T>& mask);

}  // namespace psnas::ad

#endif  // PSNAS_OPS_HPP_
