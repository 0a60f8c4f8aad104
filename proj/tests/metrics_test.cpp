// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "psnas/error.hpp"
#include "psnas/metrics.hpp"

namespace psnas::metrics {
namespace {

using scene::Vec3;

TEST(Metrics, LightAngleExamples) {
  const std::vector<Vec3> a{{1, 0, 0}, {0, 0, 1}};
  EXPECT_DOUBLE_EQ(mae_light(a, a), 0.0);
  EXPECT_NEAR(angle_deg({1, 0, 0}, {0, 1, 0}), 90.0, 1e-12);
  const std::vector<Vec3> pred{{0, 0, 1}, {std::sqrt(3.0) / 2, 0, 0.5}};
  const std::vector<Vec3> truth{{0, 0, 1}, {0, 0, 1}};
  EXPECT_NEAR(mae_light(pred, truth), 30.0, 1e-12);
  EXPECT_THROW(mae_light({}, {}), ValidationError);
  EXPECT_THROW(mae_light(pred, std::vector<Vec3>{{0, 0, 1}}), ValidationError);
}

TEST(Metrics, AngleIsScaleInvariant) {
  EXPECT_NEAR(angle_deg({0, 0, 5}, {0, 3, 3}), 45.0, 1e-12);
  EXPECT_THROW(angle_deg({0, 0, 0}, {0, 0, 1}), ValidationError);
}

TEST(Metrics, NormalErrorExamples) {
  // Two pixels, [3,H,W] with H=1, W=2.
  const std::vector<double> truth{0, 0.6, 0, 0, 1, 0.8};
  const std::vector<double> anti{0, -0.6, 0, 0, -1, -0.8};
  const std::vector<std::uint8_t> mask{1, 1};
  EXPECT_NEAR(mae_normal(truth, truth, mask), 0.0, 1e-6);
  EXPECT_NEAR(mae_normal(anti, truth, mask), 180.0, 1e-6);
  // Masked-out pixels are ignored.
  const std::vector<double> half{0, 0.6, 0, 0, 1, -0.8};
  EXPECT_NEAR(mae_normal(half, truth, std::vector<std::uint8_t>{1, 0}), 0.0, 1e-6);
  EXPECT_THROW(mae_normal(truth, truth, std::vector<std::uint8_t>{0, 0}), ValidationError);
}

TEST(Metrics, IntensityErrorWorkedExample) {
  // s = 3/2, relative errors 0.5/1 and 0.5/2.
  EXPECT_NEAR(intensity_error(std::vector<double>{1, 1}, std::vector<double>{1, 2}), 0.375, 1e-15);
  EXPECT_NEAR(intensity_error(std::vector<double>{0.7, 0.7, 0.7}, std::vector<double>{1.5, 1.5, 1.5}), 0.0, 1e-15);
  EXPECT_THROW(intensity_error(std::vector<double>{0, 0}, std::vector<double>{1, 2}), ValidationError);
}

TEST(Metrics, IntensityErrorIsScaleInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> e(0.2, 2.0), c(1e-3, 1e3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> truth(1 + trial % 30), pred(truth.size());
    for (auto& v : truth) v = e(rng);
    const double k = c(rng);
    for (std::size_t i = 0; i < truth.size(); ++i) pred[i] = k * truth[i];
    EXPECT_NEAR(intensity_error(pred, truth), 0.0, 1e-12);
    for (auto& v : pred) v = e(rng);
    const double base = intensity_error(pred, truth);
    for (auto& v : pred) v *= k;
    EXPECT_NEAR(intensity_error(pred, truth), base, 1e-12);
  }
}

TEST(EvalReport, FinalizeAveragesObjects) {
  EvalReport r;
  r.objects = {{"a", 10, 0.1, 20, 8, 100}, {"b", 20, 0.3, 40, 8, 50}};
  r.finalize();
  EXPECT_DOUBLE_EQ(r.mae_light, 15);
  EXPECT_DOUBLE_EQ(r.intensity_error, 0.2);
  EXPECT_DOUBLE_EQ(r.mae_normal, 30);
  EXPECT_EQ(r.pixels, 150u);
  EXPECT_NE(r.to_string().find("mae_normal"), std::string::npos);
}

}  // namespace
}  // namespace psnas::metrics
