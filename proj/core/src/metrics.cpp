// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "psnas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>

#include "psnas/error.hpp"

namespace psnas::metrics {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

}  // namespace

double angle_deg(const scene::Vec3& a, const scene::Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0) || !(nb > 0)) throw ValidationError("angle: zero-length vector");
  return std::acos(std::clamp(a.dot(b) / (na * nb), -1.0, 1.0)) * kDeg;
}

double mae_light(std::span<const scene::Vec3> pred, std::span<const scene::Vec3> truth) {
  if (pred.empty()) throw ValidationError("mae_light: no directions");
  if (pred.size() != truth.size()) throw ValidationError("mae_light: direction counts differ");
  double total = 0;
  for (std::size_t j = 0; j < pred.size(); ++j) total += angle_deg(pred[j], truth[j]);
  return total / static_cast<double>(pred.size());
}

double mae_normal(std::span<const double> pred, std::span<const double> truth, std::span<const std::uint8_t> mask) {
  const std::size_t hw = mask.size();
  if (pred.size() != 3 * hw || truth.size() != 3 * hw) throw ShapeError("mae_normal: maps must be [3,H,W]");
  double total = 0;
  std::size_t m = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    if (!mask[p]) continue;
    const scene::Vec3 a{pred[p], pred[hw + p], pred[2 * hw + p]};
    const scene::Vec3 b{truth[p], truth[hw + p], truth[2 * hw + p]};
    total += angle_deg(a, b);
    ++m;
  }
  if (m == 0) throw ValidationError("mae_normal: empty mask");
  return total / static_cast<double>(m);
}

double intensity_error(std::span<const double> pred, std::span<const double> truth) {
  if (pred.empty() || pred.size() != truth.size()) throw ValidationError("intensity_error: size mismatch");
  double pp = 0, pt = 0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    if (!(truth[j] > 0)) throw ValidationError("intensity_error: true intensities must be positive");
    pp += pred[j] * pred[j];
    pt += pred[j] * truth[j];
  }
  if (pp == 0) throw ValidationError("intensity_error: predicted intensities are all zero");
  const double s = pt / pp;
  double total = 0;
  for (std::size_t j = 0; j < pred.size(); ++j) total += std::abs(s * pred[j] - truth[j]) / truth[j];
  return total / static_cast<double>(pred.size());
}

void EvalReport::finalize() {
  mae_light = intensity_error = mae_normal = 0;
  pixels = 0;
  if (objects.empty()) return;
  for (const auto& o : objects) {
    mae_light += o.mae_light;
    intensity_error += o.intensity_error;
    mae_normal += o.mae_normal;
    pixels += o.pixels;
  }
  const double n = static_cast<double>(objects.size());
  mae_light /= n;
  intensity_error /= n;
  mae_normal /= n;
  images = objects.front().images;
}

void EvalReport::write(std::ostream& os) const {
  const auto old_flags = os.flags();
  const auto old_prec = os.precision();
  os << std::setprecision(17);
  os << "objects = " << objects.size() << '\n';
  os << "images = " << images << '\n';
  os << "pixels = " << pixels << '\n';
  os << "mae_light = " << mae_light << '\n';
  os << "intensity_error = " << intensity_error << '\n';
  os << "mae_normal = " << mae_normal << '\n';
  for (const auto& o : objects) {
    os << "object." << o.name << ".mae_light = " << o.mae_light << '\n';
    os << "object." << o.name << ".intensity_error = " << o.intensity_error << '\n';
    os << "object." << o.name << ".mae_normal = " << o.mae_normal << '\n';
    os << "object." << o.name << ".images = " << o.images << '\n';
    os << "object." << o.name << ".pixels = " << o.pixels << '\n';
  }
  os.flags(old_flags);
  os.precision(old_prec);
}

std::string EvalReport::to_string() const {
  std::ostringstream os;
  write(os);
  return os.str();
}

}  // namespace psnas::metrics
