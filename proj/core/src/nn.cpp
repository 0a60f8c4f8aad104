// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "psnas/nn.hpp"

#include <cmath>

#include "psnas/error.hpp"

namespace psnas::nn {

template <typename T>
std::vector<ad::Tensor<T>> ParamSet<T>::weight_tensors() const {
  std::vector<ad::Tensor<T>> v;
  for (const auto& w : weights) v.push_back(w.tensor);
  return v;
}

template <typename T>
std::vector<ad::Tensor<T>> ParamSet<T>::buffer_tensors() const {
  std::vector<ad::Tensor<T>> v;
  for (const auto& b : buffers) v.push_back(b.tensor);
  return v;
}

template <typename T>
std::size_t ParamSet<T>::weight_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.tensor.numel();
  return n;
}

template <typename T>
ad::Tensor<T> uniform_parameter(ad::Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> v(ad::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return ad::Tensor<T>::parameter(std::move(shape), std::move(v));
}

// ---- BatchNorm ----

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels, bool affine) {
  if (affine) {
    gamma_ = ad::Tensor<T>::parameter({channels}, std::vector<T>(channels, T(1)));
    beta_ = ad::Tensor<T>::parameter({channels}, std::vector<T>(channels, T(0)));
  }
  buffers_.running_mean = ad::Tensor<T>({channels}, T(0));
  buffers_.running_var = ad::Tensor<T>({channels}, T(1));
}

template <typename T>
ad::Tensor<T> BatchNorm<T>::forward(Context<T>& ctx, const ad::Tensor<T>& x) {
  return ad::batch_norm2d(ctx.tape, x, gamma_, beta_, buffers_, ctx.bn_mode);
}

template <typename T>
void BatchNorm<T>::collect(ParamSet<T>& out, const std::string& prefix) const {
  if (gamma_.defined()) {
    out.add_weight(prefix + ".gamma", gamma_);
    out.add_weight(prefix + ".beta", beta_);
  }
  out.add_buffer(prefix + ".running_mean", buffers_.running_mean);
  out.add_buffer(prefix + ".running_var", buffers_.running_var);
}

// ---- ConvBn ----

template <typename T>
ConvBn<T>::ConvBn(const Options& opt, Rng& rng) : opt_(opt), bn_(opt.out_channels, opt.affine) {
  if (opt.kernel % 2 == 0 || opt.kernel < 1) throw ValidationError("ConvBn: kernel must be odd");
  const auto k = static_cast<std::size_t>(opt.kernel);
  kernel_ = uniform_parameter<T>({opt.out_channels, opt.in_channels, k, k}, opt.in_channels * k * k, rng);
}

template <typename T>
ad::Tensor<T> ConvBn<T>::forward(Context<T>& ctx, const ad::Tensor<T>& x) {
  ad::Tensor<T> h = opt_.pre_relu ? ad::relu(ctx.tape, x) : x;
  h = ad::conv2d(ctx.tape, h, kernel_, opt_.stride, (opt_.kernel - 1) / 2);
  h = bn_.forward(ctx, h);
  return opt_.post_relu ? ad::relu(ctx.tape, h) : h;
}

template <typename T>
void ConvBn<T>::collect(ParamSet<T>& out, const std::string& prefix) const {
  out.add_weight(prefix + ".conv", kernel_);
  bn_.collect(out, prefix + ".bn");
}

// ---- SepConv ----

template <typename T>
SepConv<T>::SepConv(std::size_t in_channels, std::size_t out_channels, int kernel, int stride, bool affine, Rng& rng)
    : kernel_size_(kernel), stride_(stride), bn_(out_channels, affine) {
  if (kernel != 1 && kernel != 3 && kernel != 5) {
    throw ValidationError("SepConv: unsupported kernel size " + std::to_string(kernel));
  }
  const auto k = static_cast<std::size_t>(kernel);
  depthwise_ = uniform_parameter<T>({in_channels, 1, k, k}, k * k, rng);
  pointwise_ = uniform_parameter<T>({out_channels, in_channels, 1, 1}, in_channels, rng);
}

template <typename T>
ad::Tensor<T> SepConv<T>::forward(Context<T>& ctx, const ad::Tensor<T>& x) {
  return forward_activated(ctx, ad::relu(ctx.tape, x));
}

template <typename T>
ad::Tensor<T> SepConv<T>::forward_activated(Context<T>& ctx, const ad::Tensor<T>& relu_x) {
  auto h = ad::depthwise_conv2d(ctx.tape, relu_x, depthwise_, stride_, (kernel_size_ - 1) / 2);
  h = ad::conv2d(ctx.tape, h, pointwise_, 1, 0);
  return bn_.forward(ctx, h);
}

template <typename T>
void SepConv<T>::collect(ParamSet<T>& out, const std::string& prefix) const {
  out.add_weight(prefix + ".dw", depthwise_);
  out.add_weight(prefix + ".pw", pointwise_);
  bn_.collect(out, prefix + ".bn");
}

// ---- Linear ----

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features, Rng& rng) {
  weight_ = uniform_parameter<T>({out_features, in_features}, in_features, rng);
  bias_ = uniform_parameter<T>({out_features}, in_features, rng);
}

template <typename T>
ad::Tensor<T> Linear<T>::forward(Context<T>& ctx, const ad::Tensor<T>& x) {
  return ad::linear(ctx.tape, x, weight_, bias_);
}

template <typename T>
void Linear<T>::collect(ParamSet<T>& out, const std::string& prefix) const {
  out.add_weight(prefix + ".weight", weight_);
  out.add_weight(prefix + ".bias", bias_);
}

// ---- PointwiseHead ----

template <typename T>
PointwiseHead<T>::PointwiseHead(std::size_t in_channels, std::size_t out_channels, Rng& rng) {
  kernel_ = uniform_parameter<T>({out_channels, in_channels, 1, 1}, in_channels, rng);
  bias_ = uniform_parameter<T>({out_channels}, in_channels, rng);
}

template <typename T>
ad::Tensor<T> PointwiseHead<T>::forward(Context<T>& ctx, const ad::Tensor<T>& x) {
  return ad::add_channel_bias(ctx.tape, ad::conv2d(ctx.tape, x, kernel_, 1, 0), bias_);
}

template <typename T>
void PointwiseHead<T>::collect(ParamSet<T>& out, const std::string& prefix) const {
  out.add_weight(prefix + ".conv", kernel_);
  out.add_weight(prefix + ".bias", bias_);
}

#define PSNAS_INSTANTIATE_NN(T)                                                    \
  template struct ParamSet<T>;                                                     \
  template ad::Tensor<T> uniform_parameter<T>(ad::Shape, std::size_t, Rng&);        \
  template class BatchNorm<T>;                                                     \
  template class ConvBn<T>;                                                        \
  template class SepConv<T>;                                                       \
  template class Linear<T>;                                                        \
  template class PointwiseHead<T>;

PSNAS_INSTANTIATE_NN(float)
PSNAS_INSTANTIATE_NN(double)

}  // namespace psnas::nn
