// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "psnas/error.hpp"
#include "psnas/ops.hpp"
#include "psnas/tensor.hpp"
#include "support/gradcheck.hpp"

namespace psnas::ad {
namespace {

using testing::TapeD;
using testing::TensorD;

constexpr int kSeeds = 20;

TEST(Tensor, ShapeAndFill) {
  TensorD t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_DOUBLE_EQ(t[5], 1.5);
  EXPECT_FALSE(t.requires_grad());
  EXPECT_THROW(TensorD({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, HandleSemanticsAndClone) {
  TensorD a({2}, 0.0);
  TensorD b = a;
  b[0] = 3;
  EXPECT_DOUBLE_EQ(a[0], 3);
  TensorD c = a.clone();
  c[0] = 7;
  EXPECT_DOUBLE_EQ(a[0], 3);
}

TEST(Tape, NonRecordingTapeKeepsNoEntries) {
  TapeD tape(false);
  TensorD x = TensorD::parameter({3}, {1, 2, 3});
  const auto y = mul(tape, x, x);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_DOUBLE_EQ(y[2], 9);
}

TEST(Backward, SumGivesOnes) {
  TapeD tape;
  TensorD x = TensorD::parameter({2, 2}, {0.5, -1, 2, 3});
  tape.backward(sum(tape, x));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwiceInput) {
  TapeD tape;
  TensorD x = TensorD::parameter({3}, {0.5, -1, 2});
  tape.backward(sum(tape, mul(tape, x, x)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x[i]);
}

TEST(Backward, AccumulatesIntoLeavesAcrossTapes) {
  TensorD x = TensorD::parameter({1}, {2.0});
  for (int k = 0; k < 2; ++k) {
    TapeD tape;
    tape.backward(mul(tape, x, x));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Conv2d, OneByOneIdentityKernel) {
  TapeD tape(false);
  std::mt19937_64 rng(1);
  const TensorD x = testing::random_const({2, 3, 4, 4}, rng);
  TensorD k({3, 3, 1, 1}, 0.0);
  for (std::size_t c = 0; c < 3; ++c) k[c * 3 + c] = 1.0;
  const auto y = conv2d(tape, x, k, 1, 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, AllOnesKernelOnConstantImage) {
  TapeD tape(false);
  const double c = 0.7;
  const TensorD x({1, 1, 5, 5}, c);
  const TensorD k({1, 1, 3, 3}, 1.0);
  const auto y = conv2d(tape, x, k, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 5, 5}));
  EXPECT_NEAR(y[0], 4 * c, 1e-15);           // corner
  EXPECT_NEAR(y[2], 6 * c, 1e-15);           // top edge
  EXPECT_NEAR(y[2 * 5 + 2], 9 * c, 1e-15);   // interior
  EXPECT_NEAR(y[4 * 5 + 4], 4 * c, 1e-15);   // corner
}

TEST(Conv2d, StrideTwoOutputSize) {
  TapeD tape(false);
  const auto y = conv2d(tape, TensorD({1, 2, 7, 7}, 1.0), TensorD({3, 2, 3, 3}, 1.0), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 4, 4}));
}

TEST(Conv2d, RejectsChannelMismatch) {
  TapeD tape(false);
  EXPECT_THROW(conv2d(tape, TensorD({1, 2, 4, 4}), TensorD({1, 3, 3, 3}), 1, 1), ShapeError);
}

TEST(BatchNorm, StandardizedInputPassesThrough) {
  TapeD tape(false);
  // Per channel: values -1, 1 over the batch (mean 0, biased variance 1).
  const TensorD x({2, 1, 1, 1}, std::vector<double>{-1, 1});
  BatchNormBuffers<double> b{TensorD({1}, 0.0), TensorD({1}, 1.0)};
  const auto y = batch_norm2d(tape, x, TensorD({1}, 1.0), TensorD({1}, 0.0), b, BnMode::kTrain);
  const double s = 1 / std::sqrt(1 + kBnEps);
  EXPECT_NEAR(y[0], -s, 1e-12);
  EXPECT_NEAR(y[1], s, 1e-12);
}

TEST(BatchNorm, ConstantChannelGivesBeta) {
  TapeD tape(false);
  const TensorD x({3, 2, 2, 2}, 4.0);
  BatchNormBuffers<double> b{TensorD({2}, 0.0), TensorD({2}, 1.0)};
  const TensorD beta({2}, std::vector<double>{0.25, -0.5});
  const auto y = batch_norm2d(tape, x, TensorD({2}, std::vector<double>{2, 3}), beta, b, BnMode::kTrain);
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(y[(n * 2 + c) * 4 + p], beta[c], 1e-12);
    }
  }
}

TEST(BatchNorm, TrainUpdatesRunningStatsOnlyInTrainMode) {
  TapeD tape(false);
  const TensorD x({2, 1, 1, 1}, std::vector<double>{1, 3});
  BatchNormBuffers<double> b{TensorD({1}, 0.0), TensorD({1}, 1.0)};
  batch_norm2d(tape, x, TensorD(), TensorD(), b, BnMode::kTrainNoUpdate);
  EXPECT_DOUBLE_EQ(b.running_mean[0], 0.0);
  batch_norm2d(tape, x, TensorD(), TensorD(), b, BnMode::kTrain);
  EXPECT_NEAR(b.running_mean[0], 0.1 * 2.0, 1e-12);
  // Unbiased batch variance 2 blended with momentum 0.1.
  EXPECT_NEAR(b.running_var[0], 0.9 + 0.1 * 2.0, 1e-12);
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogK) {
  TapeD tape(false);
  const std::vector<int> t{5, 0};
  EXPECT_NEAR(softmax_cross_entropy(tape, TensorD({2, 36}, 0.3), std::span<const int>(t)).item(), std::log(36.0),
              1e-12);
  EXPECT_NEAR(softmax_cross_entropy(tape, TensorD({2, 20}, -1.0), std::span<const int>(t)).item(), std::log(20.0),
              1e-12);
}

TEST(SoftmaxCrossEntropy, SaturatedCorrectLogitGivesZero) {
  TapeD tape(false);
  TensorD logits({1, 36}, 0.0);
  logits[7] = 1000;
  const std::vector<int> t{7};
  EXPECT_NEAR(softmax_cross_entropy(tape, logits, std::span<const int>(t)).item(), 0.0, 1e-12);
}

TEST(SoftmaxCrossEntropy, GradientIsSoftmaxMinusOneHot) {
  TapeD tape;
  TensorD logits = TensorD::parameter({1, 4}, {0.1, -0.3, 0.7, 0.2});
  const std::vector<int> t{2};
  tape.backward(softmax_cross_entropy(tape, logits, std::span<const int>(t)));
  double z = 0;
  for (double v : logits.data()) z += std::exp(v);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(logits.grad()[k], std::exp(logits[k]) / z - (k == 2 ? 1.0 : 0.0), 1e-14);
  }
}

TEST(SoftmaxCrossEntropy, RejectsOutOfRangeTarget) {
  TapeD tape(false);
  const std::vector<int> t{4};
  EXPECT_THROW(softmax_cross_entropy(tape, TensorD({1, 4}), std::span<const int>(t)), ValidationError);
}

TEST(ReduceMaxOverSet, SingleElementSetIsIdentity) {
  TapeD tape(false);
  std::mt19937_64 rng(2);
  const TensorD x = testing::random_const({1, 2, 3, 3}, rng);
  const auto y = reduce_max_over_set(tape, x, 1);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(ReduceMaxOverSet, LargerMemberTakesValueAndGradient) {
  TapeD tape;
  TensorD x = TensorD::parameter({2, 1, 1, 2}, {0.1, 0.2, 0.5, 0.6});
  const auto y = reduce_max_over_set(tape, x, 1);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.6);
  tape.backward(sum(tape, y));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 0, 1, 1}));
}

TEST(ReduceMaxOverSet, PermutationInvariant) {
  TapeD tape(false);
  std::mt19937_64 rng(3);
  const TensorD x = testing::random_const({3, 2, 2, 2}, rng);
  TensorD p({3, 2, 2, 2});
  const std::size_t per = 8;
  const std::size_t perm[3] = {2, 0, 1};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < per; ++k) p[i * per + k] = x[perm[i] * per + k];
  }
  const auto a = reduce_max_over_set(tape, x, 1);
  const auto b = reduce_max_over_set(tape, p, 1);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_DOUBLE_EQ(a[i], b[i]);
}

TEST(L2Normalize, ScalesToUnitAndIsIdempotent) {
  TapeD tape(false);
  const TensorD x({1, 3, 1, 1}, std::vector<double>{0, 0, 2});
  const auto y = l2_normalize_channels(tape, x, 1e-12);
  EXPECT_DOUBLE_EQ(y[2], 1.0);
  const TensorD u({1, 3, 1, 1}, std::vector<double>{0.6, 0, 0.8});
  const auto v = l2_normalize_channels(tape, u, 1e-12);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(v[i], u[i], 1e-15);
}

TEST(SoftmaxRows, RowsSumToOne) {
  TapeD tape(false);
  std::mt19937_64 rng(4);
  const auto y = softmax_rows(tape, testing::random_const({4, 5}, rng));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 5; ++k) s += y[r * 5 + k];
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
}

TEST(CosineLoss, Bounds) {
  TapeD tape(false);
  const TensorD mask({1, 1, 1, 2}, 1.0);
  const TensorD n({1, 3, 1, 2}, std::vector<double>{0, 0, 0, 0, 1, 1});
  const TensorD neg({1, 3, 1, 2}, std::vector<double>{0, 0, 0, 0, -1, -1});
  const TensorD half({1, 3, 1, 2}, std::vector<double>{1, 0, 0, 0, 0, 1});
  EXPECT_NEAR(cosine_loss(tape, n, n, mask).item(), 0.0, 1e-15);
  EXPECT_NEAR(cosine_loss(tape, neg, n, mask).item(), 2.0, 1e-15);
  EXPECT_NEAR(cosine_loss(tape, half, n, mask).item(), 0.5, 1e-15);
}

class PrimitiveGradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(PrimitiveGradients, MatchCentralDifferences) {
  const auto cases = testing::primitive_cases();
  const auto& c = cases.at(GetParam());
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto r = c.run(static_cast<std::uint64_t>(seed) + 1);
    ASSERT_GT(r.checked, 0u);
    EXPECT_LT(r.max_rel_error, c.tolerance) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradients,
                         ::testing::Range<std::size_t>(0, testing::primitive_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return testing::primitive_cases()[info.param].name;
                         });

class LossGradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(LossGradients, MatchCentralDifferences) {
  const auto cases = testing::loss_cases();
  const auto& c = cases.at(GetParam());
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto r = c.run(static_cast<std::uint64_t>(seed) + 1);
    EXPECT_LT(r.max_rel_error, c.tolerance) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllLosses, LossGradients, ::testing::Range<std::size_t>(0, testing::loss_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return testing::loss_cases()[info.param].name;
                         });

class NetworkGradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(NetworkGradients, MatchCentralDifferences) {
  const auto cases = testing::network_cases();
  const auto& c = cases.at(GetParam());
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto r = c.run(static_cast<std::uint64_t>(seed) + 1);
    EXPECT_LT(r.max_rel_error, c.tolerance) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(EndToEnd, NetworkGradients,
                         ::testing::Range<std::size_t>(0, testing::network_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return testing::network_cases()[info.param].name;
                         });

}  // namespace
}  // namespace psnas::ad
