// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_BILEVEL_HPP_
#define PSNAS_BILEVEL_HPP_

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "psnas/adam.hpp"
#include "psnas/error.hpp"
#include "psnas/ops.hpp"
#include "psnas/tensor.hpp"

// Alternating optimization of network weights (on the training loss) and
// architecture parameters (on the validation loss).
namespace psnas::search {

/// Anything with weights, architecture parameters and a scalar loss on a
/// batch. Tensors are handles: the returned vectors alias the model's state.
template <typename M>
concept SearchModel = requires(M& m, ad::Tape<typename M::Scalar>& tape, const typename M::Batch& b) {
  { m.loss(tape, b, ad::BnMode::kTrain) } -> std::same_as<ad::Tensor<typename M::Scalar>>;
  { m.weights() } -> std::same_as<std::vector<ad::Tensor<typename M::Scalar>>>;
  { m.arch() } -> std::same_as<std::vector<ad::Tensor<typename M::Scalar>>>;
};

enum class SearchOrder { kFirst, kSecond };

inline const char* order_name(SearchOrder o) { return o == SearchOrder::kFirst ? "first" : "second"; }

struct SearchConfig {
  double xi = 5e-4;  // inner learning rate; defaults to the weight learning rate
  SearchOrder order = SearchOrder::kFirst;
  std::size_t epochs = 3;
  std::uint64_t seed = 0;
  double fd_scale = 0.01;
  double divergence_limit = 1e4;
  opt::AdamConfig arch_adam{3e-4, 0.5, 0.999, 1e-8, 1e-3};
  opt::AdamConfig weight_adam{5e-4, 0.5, 0.999, 1e-8, 3e-4};
};

template <typename T>
using Grads = std::vector<std::vector<T>>;

template <typename T>
struct ArchGradient {
  Grads<T> grads;
  double val_loss = 0;
  bool fell_back = false;  // second order degraded to first order
};

struct ArchStepReport {
  double val_loss = 0;
  bool fell_back = false;
};

/// Throws DivergenceError if the loss is non-finite or above limit.
inline double check_loss(double value, const std::string& where, double limit = 1e4) {
  if (!std::isfinite(value) || value > limit) {
    throw DivergenceError(where + ": loss diverged (" + std::to_string(value) + ")", "");
  }
  return value;
}

namespace detail {

template <typename T>
std::vector<std::vector<T>> snapshot(const std::vector<ad::Tensor<T>>& ts) {
  std::vector<std::vector<T>> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

template <typename T>
void restore(std::vector<ad::Tensor<T>>& ts, const std::vector<std::vector<T>>& values) {
  for (std::size_t i = 0; i < ts.size(); ++i) std::copy(values[i].begin(), values[i].end(), ts[i].data().begin());
}

template <typename T>
Grads<T> collect_grads(const std::vector<ad::Tensor<T>>& ts) {
  Grads<T> g;
  g.reserve(ts.size());
  for (const auto& t : ts) {
    if (t.has_grad()) {
      g.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      g.emplace_back(t.numel(), T(0));
    }
  }
  return g;
}

// Forward + backward with fresh zero gradients on weights and arch.
template <SearchModel M>
double forward_backward(M& model, const typename M::Batch& batch, ad::BnMode mode, double limit,
                        const char* where) {
  using T = typename M::Scalar;
  for (auto& t : model.weights()) t.zero_grad();
  for (auto& t : model.arch()) t.zero_grad();
  ad::Tape<T> tape;
  const ad::Tensor<T> loss = model.loss(tape, batch, mode);
  const double value = check_loss(static_cast<double>(loss.item()), where, limit);
  tape.backward(loss);
  return value;
}

}  // namespace detail

/// Mean loss over batches without recording or touching running statistics.
template <SearchModel M>
double evaluate_loss(M& model, std::span<const typename M::Batch> batches,
                     ad::BnMode mode = ad::BnMode::kTrainNoUpdate) {
  using T = typename M::Scalar;
  if (batches.empty()) throw ValidationError("evaluate_loss: no batches");
  double total = 0;
  for (const auto& b : batches) {
    ad::Tape<T> tape(false);
    total += static_cast<double>(model.loss(tape, b, mode).item());
  }
  return total / static_cast<double>(batches.size());
}

/// One Adam step on the weights using the training loss. Returns the loss.
template <SearchModel M>
double weight_step(M& model, const typename M::Batch& batch, opt::AdamState<typename M::Scalar>& state,
                   double limit = 1e4) {
  const double loss = detail::forward_backward(model, batch, ad::BnMode::kTrain, limit, "weight step");
  auto w = model.weights();
  opt::adam_step<typename M::Scalar>(w, state);
  return loss;
}

/// grad_alpha L_val(w, alpha) at the current weights.
template <SearchModel M>
ArchGradient<typename M::Scalar> first_order_arch_gradient(M& model, const typename M::Batch& val,
                                                           double limit = 1e4) {
  ArchGradient<typename M::Scalar> g;
  g.val_loss = detail::forward_backward(model, val, ad::BnMode::kTrainNoUpdate, limit, "arch step");
  g.grads = detail::collect_grads(model.arch());
  return g;
}

/// grad_alpha L_val(w - xi grad_w L_train(w, alpha), alpha), with the
/// mixed second-derivative term approximated by central differences along
/// v = grad_w' L_val. Weights are restored exactly before returning.
template <SearchModel M>
ArchGradient<typename M::Scalar> second_order_arch_gradient(M& model, const typename M::Batch& train,
                                                            const typename M::Batch& val, double xi,
                                                            double fd_scale = 0.01, double limit = 1e4) {
  using T = typename M::Scalar;
  if (xi < 0) throw ValidationError("second_order_arch_gradient: xi must be >= 0");
  if (xi == 0) return first_order_arch_gradient(model, val, limit);

  auto weights = model.weights();
  const auto original = detail::snapshot(weights);
  const ad::BnMode mode = ad::BnMode::kTrainNoUpdate;

  try {
    // Virtual step w' = w - xi * grad_w L_train(w, alpha).
    detail::forward_backward(model, train, mode, limit, "arch step (virtual)");
    const Grads<T> g_train = detail::collect_grads(weights);
    for (std::size_t i = 0; i < weights.size(); ++i) {
      auto w = weights[i].data();
      for (std::size_t k = 0; k < w.size(); ++k) w[k] = original[i][k] - static_cast<T>(xi) * g_train[i][k];
    }

    ArchGradient<T> out;
    out.val_loss = detail::forward_backward(model, val, mode, limit, "arch step");
    out.grads = detail::collect_grads(model.arch());
    const Grads<T> v = detail::collect_grads(weights);

    double norm2 = 0;
    for (const auto& vi : v)
      for (T x : vi) norm2 += static_cast<double>(x) * static_cast<double>(x);
    if (norm2 == 0) {
      detail::restore(weights, original);
      ArchGradient<T> fallback = first_order_arch_gradient(model, val, limit);
      fallback.fell_back = true;
      return fallback;
    }
    const double eps = fd_scale / std::sqrt(norm2);

    auto perturbed_arch_grad = [&](double sign) {
      for (std::size_t i = 0; i < weights.size(); ++i) {
        auto w = weights[i].data();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = original[i][k] + static_cast<T>(sign * eps) * v[i][k];
      }
      detail::forward_backward(model, train, mode, limit, "arch step (finite difference)");
      return detail::collect_grads(model.arch());
    };
    const Grads<T> g_plus = perturbed_arch_grad(+1.0);
    const Grads<T> g_minus = perturbed_arch_grad(-1.0);
    detail::restore(weights, original);

    const double factor = xi / (2.0 * eps);
    for (std::size_t i = 0; i < out.grads.size(); ++i) {
      for (std::size_t k = 0; k < out.grads[i].size(); ++k) {
        const double hv = static_cast<double>(g_plus[i][k]) - static_cast<double>(g_minus[i][k]);
        out.grads[i][k] = static_cast<T>(static_cast<double>(out.grads[i][k]) - factor * hv);
      }
    }
    return out;
  } catch (...) {
    detail::restore(weights, original);
    throw;
  }
}

template <SearchModel M>
ArchStepReport first_order_arch_step(M& model, const typename M::Batch& val,
                                     opt::AdamState<typename M::Scalar>& state, double limit = 1e4) {
  auto g = first_order_arch_gradient(model, val, limit);
  auto a = model.arch();
  opt::adam_step<typename M::Scalar>(a, g.grads, state);
  return {g.val_loss, false};
}

template <SearchModel M>
ArchStepReport second_order_arch_step(M& model, const typename M::Batch& train, const typename M::Batch& val,
                                      double xi, opt::AdamState<typename M::Scalar>& state, double fd_scale = 0.01,
                                      double limit = 1e4) {
  auto g = second_order_arch_gradient(model, train, val, xi, fd_scale, limit);
  auto a = model.arch();
  opt::adam_step<typename M::Scalar>(a, g.grads, state);
  return {g.val_loss, g.fell_back};
}

struct SearchLogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double train_loss = 0;
  double val_loss = 0;
};

template <typename T>
struct SearchState {
  opt::AdamState<T> weight_adam;
  opt::AdamState<T> arch_adam;
  std::size_t epoch = 0;
  std::size_t step = 0;
};

template <typename T>
struct SearchResult {
  std::vector<SearchLogRow> log;
  std::vector<Grads<T>> alpha_trajectory;  // alpha after init and after every step
  double initial_val_loss = 0;
  double final_val_loss = 0;
  std::size_t fallbacks = 0;
};

/// Per batch: one weight step on a training batch, then one architecture
/// step on a validation batch. Training batches are visited in a fresh
/// seeded order each epoch; validation batches are cycled.
template <SearchModel M>
SearchResult<typename M::Scalar> search_loop(
    M& model, std::span<const typename M::Batch> train, std::span<const typename M::Batch> val,
    const SearchConfig& config,
    const std::function<void(std::size_t epoch, const SearchState<typename M::Scalar>&)>& on_epoch = {}) {
  using T = typename M::Scalar;
  if (train.empty() || val.empty()) throw ValidationError("search_loop: empty train or validation split");
  if (config.order == SearchOrder::kSecond && config.xi <= 0) {
    throw ValidationError("search_loop: second-order search needs xi > 0");
  }
  const auto weights = model.weights();
  const auto arch = model.arch();
  SearchState<T> state{opt::AdamState<T>(config.weight_adam, weights), opt::AdamState<T>(config.arch_adam, arch)};
  SearchResult<T> result;
  result.alpha_trajectory.push_back(detail::snapshot(arch));
  result.initial_val_loss = evaluate_loss(model, val);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::size_t val_cursor = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const auto& tb = train[idx];
      const auto& vb = val[val_cursor++ % val.size()];
      SearchLogRow row{epoch, state.step, 0, 0};
      row.train_loss = weight_step(model, tb, state.weight_adam, config.divergence_limit);
      ArchStepReport rep = config.order == SearchOrder::kFirst
                               ? first_order_arch_step(model, vb, state.arch_adam, config.divergence_limit)
                               : second_order_arch_step(model, tb, vb, config.xi, state.arch_adam, config.fd_scale,
                                                        config.divergence_limit);
      row.val_loss = rep.val_loss;
      if (rep.fell_back) ++result.fallbacks;
      result.log.push_back(row);
      result.alpha_trajectory.push_back(detail::snapshot(arch));
      ++state.step;
    }
    state.epoch = epoch + 1;
    if (on_epoch) on_epoch(epoch, state);
  }
  result.final_val_loss = evaluate_loss(model, val);
  return result;
}

}  // namespace psnas::search

#endif  // PSNAS_BILEVEL_HPP_
