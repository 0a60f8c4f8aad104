// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "psnas/binning.hpp"
#include "psnas/error.hpp"
#include "psnas/metrics.hpp"
#include "psnas/scene.hpp"

namespace psnas {
namespace {

constexpr double kPi = std::numbers::pi;

TEST(Binning, EdgeClasses) {
  const auto spec = BinningSpec::standard();
  EXPECT_EQ(spec.azimuth.encode(0.0), 0);
  EXPECT_EQ(spec.azimuth.encode(kPi), 35);
  EXPECT_EQ(spec.intensity.encode(0.2), 0);
  EXPECT_EQ(spec.intensity.encode(2.0), 19);
  EXPECT_EQ(spec.elevation.encode(0.0), 18);
  EXPECT_EQ(spec.elevation.encode(-kPi / 2), 0);
  EXPECT_EQ(spec.elevation.encode(kPi / 2), 35);
}

TEST(Binning, RejectsOutOfRange) {
  const auto spec = BinningSpec::standard();
  EXPECT_THROW(spec.azimuth.encode(-0.1), ValidationError);
  EXPECT_THROW(spec.intensity.encode(2.5), ValidationError);
  EXPECT_THROW(spec.azimuth.decode(36), ValidationError);
  EXPECT_THROW(spec.intensity.decode(-1), ValidationError);
}

TEST(Binning, DecodeGivesBinCentres) {
  const auto spec = BinningSpec::standard();
  EXPECT_NEAR(spec.azimuth.decode(0), kPi / 72, 1e-15);
  EXPECT_NEAR(spec.intensity.decode(0), 0.2 + 0.045, 1e-15);
  EXPECT_NEAR(spec.elevation.decode(18), kPi / 72, 1e-15);
}

TEST(Binning, OverheadLightDecodesNearZenith) {
  const auto spec = BinningSpec::standard();
  for (int az : {17, 18}) {
    const auto d = decode_light({az, 18, 10}, spec);
    EXPECT_LT(metrics::angle_deg(d.direction, {0, 0, 1}), 5.0);
  }
}

TEST(Binning, RoundTripStaysWithinHalfBin) {
  const auto spec = BinningSpec::standard();
  scene::Rng rng(1);
  const auto lights = scene::sample_upper_hemisphere(5000, rng);
  for (std::size_t j = 0; j < lights.size(); ++j) {
    const auto c = encode_light(lights.directions[j], lights.intensities[j], spec);
    const auto d = decode_light(c, spec);
    const auto [phi, theta] = scene::angles_from_direction(lights.directions[j]);
    EXPECT_LE(std::abs(d.phi - phi), spec.azimuth.width() / 2 + 1e-12);
    EXPECT_LE(std::abs(d.theta - theta), spec.elevation.width() / 2 + 1e-12);
    EXPECT_LE(std::abs(d.intensity - lights.intensities[j]), spec.intensity.width() / 2 + 1e-12);
    EXPECT_EQ(encode_light(d.direction, d.intensity, spec), c);
  }
}

}  // namespace
}  // namespace psnas
