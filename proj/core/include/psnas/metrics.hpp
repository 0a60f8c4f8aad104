// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_METRICS_HPP_
#define PSNAS_METRICS_HPP_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "psnas/scene.hpp"

namespace psnas::metrics {

/// Angle in degrees between two vectors, dot product clamped to [-1, 1].
double angle_deg(const scene::Vec3& a, const scene::Vec3& b);

/// Mean angular error in degrees between paired directions.
double mae_light(std::span<const scene::Vec3> pred, std::span<const scene::Vec3> truth);

/// Mean angular error in degrees over masked pixels of two [3,H,W] maps.
double mae_normal(std::span<const double> pred, std::span<const double> truth, std::span<const std::uint8_t> mask);

/// Scale-invariant relative intensity error: s = <pred,truth>/<pred,pred>,
/// then mean |s pred - truth| / truth.
double intensity_error(std::span<const double> pred, std::span<const double> truth);

struct ObjectReport {
  std::string name;
  double mae_light = 0;
  double intensity_error = 0;
  double mae_normal = 0;
  std::size_t images = 0;
  std::size_t pixels = 0;
};

struct EvalReport {
  std::vector<ObjectReport> objects;
  double mae_light = 0;
  double intensity_error = 0;
  double mae_normal = 0;
  std::size_t images = 0;  // n per object
  std::size_t pixels = 0;  // masked pixels over all objects

  /// Averages the per-object entries.
  void finalize();
  /// `key = value` lines.
  void write(std::ostream& os) const;
  std::string to_string() const;
};

}  // namespace psnas::metrics

#endif  // PSNAS_METRICS_HPP_
