// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "psnas/binning.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "psnas/error.hpp"

namespace psnas {

int Bins::encode(double value) const {
  // Slack absorbs f32 storage and angle round-off; values that sit on a
  // bin edge up to round-off go to the upper bin.
  constexpr double kSlack = 1e-6;
  if (!(value >= lo - kSlack && value <= hi + kSlack)) {
    throw ValidationError("bin value " + std::to_string(value) + " outside [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
  }
  const int k = static_cast<int>(std::floor((value - lo) / width() + 1e-9));
  return k < 0 ? 0 : (k >= count ? count - 1 : k);
}

double Bins::decode(int k) const {
  if (k < 0 || k >= count) throw ValidationError("bin class " + std::to_string(k) + " out of range");
  return lo + (k + 0.5) * width();
}

BinningSpec BinningSpec::standard() {
  constexpr double pi = std::numbers::pi;
  return {Bins{0.0, pi, 36}, Bins{-pi / 2, pi / 2, 36}, Bins{scene::kMinIntensity, scene::kMaxIntensity, 20}};
}

LightClasses encode_light(const scene::Vec3& direction, double intensity, const BinningSpec& spec) {
  const auto [phi, theta] = scene::angles_from_direction(direction);
  return {spec.azimuth.encode(phi), spec.elevation.encode(theta), spec.intensity.encode(intensity)};
}

DecodedLight decode_light(const LightClasses& c, const BinningSpec& spec) {
  DecodedLight d;
  d.phi = spec.azimuth.decode(c.azimuth);
  d.theta = spec.elevation.decode(c.elevation);
  d.intensity = spec.intensity.decode(c.intensity);
  d.direction = scene::direction_from_angles(d.phi, d.theta);
  return d;
}

}  // namespace psnas
