// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_NN_HPP_
#define PSNAS_NN_HPP_

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "psnas/ops.hpp"
#include "psnas/tensor.hpp"

namespace psnas::nn {

using Rng = std::mt19937_64;

template <typename T>
struct NamedTensor {
  std::string name;
  ad::Tensor<T> tensor;
};

/// Ordered, named view of a module's trainable weights and its
/// non-trainable buffers (batch-norm running statistics).
template <typename T>
struct ParamSet {
  std::vector<NamedTensor<T>> weights;
  std::vector<NamedTensor<T>> buffers;

  void add_weight(std::string name, const ad::Tensor<T>& t) { weights.push_back({std::move(name), t}); }
  void add_buffer(std::string name, const ad::Tensor<T>& t) { buffers.push_back({std::move(name), t}); }

  std::vector<ad::Tensor<T>> weight_tensors() const;
  std::vector<ad::Tensor<T>> buffer_tensors() const;
  std::size_t weight_count() const;  // total scalars
};

/// Forward-pass state threaded through every module.
template <typename T>
struct Context {
  ad::Tape<T>& tape;
  ad::BnMode bn_mode = ad::BnMode::kTrain;
  /// Inference with batch statistics: normalization as in training, but
  /// training-only branches (the auxiliary tower) are skipped.
  bool inference = false;

  bool training() const { return bn_mode != ad::BnMode::kEval && !inference; }
};

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
template <typename T>
ad::Tensor<T> uniform_parameter(ad::Shape shape, std::size_t fan_in, Rng& rng);

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::size_t channels, bool affine);

  ad::Tensor<T> forward(Context<T>& ctx, const ad::Tensor<T>& x);
  void collect(ParamSet<T>& out, const std::string& prefix) const;

 private:
  ad::Tensor<T> gamma_, beta_;
  ad::BatchNormBuffers<T> buffers_;
};

/// [ReLU ->] kxk conv -> BN [-> ReLU].
template <typename T>
class ConvBn {
 public:
  struct Options {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    int kernel = 1;
    int stride = 1;
    bool affine = true;
    bool pre_relu = false;
    bool post_relu = false;
  };

  ConvBn() = default;
  ConvBn(const Options& opt, Rng& rng);

  ad::Tensor<T> forward(Context<T>& ctx, const ad::Tensor<T>& x);
  void collect(ParamSet<T>& out, const std::string& prefix) const;

 private:
  Options opt_;
  ad::Tensor<T> kernel_;
  BatchNorm<T> bn_;
};

/// ReLU -> depthwise kxk (stride) -> pointwise 1x1 -> BN.
template <typename T>
class SepConv {
 public:
  SepConv() = default;
  SepConv(std::size_t in_channels, std::size_t out_channels, int kernel, int stride, bool affine, Rng& rng);

  ad::Tensor<T> forward(Context<T>& ctx, const ad::Tensor<T>& x);
  /// Same as forward() for an input that has already been through ReLU.
  ad::Tensor<T> forward_activated(Context<T>& ctx, const ad::Tensor<T>& relu_x);
  void collect(ParamSet<T>& out, const std::string& prefix) const;

  int kernel() const { return kernel_size_; }

 private:
  int kernel_size_ = 1;
  int stride_ = 1;
  ad::Tensor<T> depthwise_, pointwise_;
  BatchNorm<T> bn_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng);

  ad::Tensor<T> forward(Context<T>& ctx, const ad::Tensor<T>& x);
  void collect(ParamSet<T>& out, const std::string& prefix) const;

 private:
  ad::Tensor<T> weight_, bias_;
};

/// 1x1 conv with bias; used for fixed prediction heads.
template <typename T>
class PointwiseHead {
 public:
  PointwiseHead() = default;
  PointwiseHead(std::size_t in_channels, std::size_t out_channels, Rng& rng);

  ad::Tensor<T> forward(Context<T>& ctx, const ad::Tensor<T>& x);
  void collect(ParamSet<T>& out, const std::string& prefix) const;

 private:
  ad::Tensor<T> kernel_, bias_;
};

}  // namespace psnas::nn

#endif  // PSNAS_NN_HPP_
