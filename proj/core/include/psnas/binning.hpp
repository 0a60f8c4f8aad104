// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_BINNING_HPP_
#define PSNAS_BINNING_HPP_

#include <cstddef>

#include "psnas/scene.hpp"

namespace psnas {

/// Evenly spaced bins over [lo, hi]; bin k covers [lo + k w, lo + (k+1) w)
/// and the top edge hi belongs to the last bin.
struct Bins {
  double lo = 0;
  double hi = 1;
  int count = 1;

  double width() const { return (hi - lo) / count; }
  /// Throws ValidationError outside [lo, hi].
  int encode(double value) const;
  /// Bin centre.
  double decode(int k) const;
};

struct BinningSpec {
  Bins azimuth;
  Bins elevation;
  Bins intensity;

  static BinningSpec standard();
};

struct LightClasses {
  int azimuth = 0;
  int elevation = 0;
  int intensity = 0;
  bool operator==(const LightClasses&) const = default;
};

struct DecodedLight {
  double phi = 0;
  double theta = 0;
  double intensity = 0;
  scene::Vec3 direction;
};

LightClasses encode_light(const scene::Vec3& direction, double intensity, const BinningSpec& spec);
DecodedLight decode_light(const LightClasses& classes, const BinningSpec& spec);

}  // namespace psnas

#endif  // PSNAS_BINNING_HPP_
