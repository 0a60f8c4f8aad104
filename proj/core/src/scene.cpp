// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "psnas/scene.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "psnas/error.hpp"

namespace psnas::scene {

double Vec3::norm() const { return std::sqrt(dot(*this)); }

Vec3 Vec3::normalized() const {
  const double n = norm();
  return n > 0 ? (*this) * (1.0 / n) : *this;
}

std::size_t ObjectScene::masked_pixels() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

Vec3 ObjectScene::normal(std::size_t p) const {
  const std::size_t hw = pixels();
  return {normals[p], normals[hw + p], normals[2 * hw + p]};
}

void ObjectScene::set_normal(std::size_t p, const Vec3& n) {
  const std::size_t hw = pixels();
  normals[p] = n.x;
  normals[hw + p] = n.y;
  normals[2 * hw + p] = n.z;
}

void ObjectScene::validate() const {
  const std::size_t hw = pixels();
  if (normals.size() != 3 * hw || albedo.size() != hw || mask.size() != hw) {
    throw ValidationError("scene: array sizes do not match " + std::to_string(height) + "x" + std::to_string(width));
  }
  for (std::size_t p = 0; p < hw; ++p) {
    if (!mask[p]) continue;
    const Vec3 n = normal(p);
    if (std::abs(n.norm() - 1.0) > 1e-6) throw ValidationError("scene: normal at pixel " + std::to_string(p) + " is not unit");
    if (n.z <= 0) throw ValidationError("scene: normal at pixel " + std::to_string(p) + " faces away from the camera");
    if (!(albedo[p] > 0 && albedo[p] <= 1)) {
      throw ValidationError("scene: albedo at pixel " + std::to_string(p) + " outside (0,1]");
    }
  }
}

void LightSet::validate() const {
  if (directions.size() != intensities.size()) throw ValidationError("lights: direction/intensity count mismatch");
  for (std::size_t j = 0; j < directions.size(); ++j) {
    const Vec3& l = directions[j];
    if (std::abs(l.norm() - 1.0) > 1e-6) throw ValidationError("lights: direction " + std::to_string(j) + " is not unit");
    if (l.z < 0) throw ValidationError("lights: direction " + std::to_string(j) + " below the horizon");
    if (intensities[j] < kMinIntensity - 1e-12 || intensities[j] > kMaxIntensity + 1e-12) {
      throw ValidationError("lights: intensity " + std::to_string(j) + " outside [0.2, 2]");
    }
  }
}

Vec3 direction_from_angles(double phi, double theta) {
  return {std::cos(theta) * std::cos(phi), std::sin(theta), std::cos(theta) * std::sin(phi)};
}

std::pair<double, double> angles_from_direction(const Vec3& l) {
  const Vec3 u = l.normalized();
  const double theta = std::asin(std::clamp(u.y, -1.0, 1.0));
  double phi = std::atan2(u.z, u.x);
  if (phi < 0) phi = 0;  // z is never negative for valid lights; guard -0 rounding
  return {phi, theta};
}

PSObservation render(const ObjectScene& scene, const LightSet& lights, const NoiseSpec& noise, Rng* rng) {
  if (noise.sigma < 0) throw ValidationError("render: noise sigma must be >= 0");
  if (noise.sigma > 0 && rng == nullptr) throw ValidationError("render: noise requires an rng");
  const std::size_t hw = scene.pixels();
  PSObservation obs;
  obs.count = lights.size();
  obs.height = scene.height;
  obs.width = scene.width;
  obs.images.assign(obs.count * hw, 0.0);
  obs.mask = scene.mask;
  std::normal_distribution<double> gauss(0.0, noise.sigma > 0 ? noise.sigma : 1.0);
  for (std::size_t j = 0; j < obs.count; ++j) {
    const Vec3& l = lights.directions[j];
    const double e = lights.intensities[j];
    double* img = obs.images.data() + j * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      if (!scene.mask[p]) continue;
      double v = scene.albedo[p] * scene.normal(p).dot(l);
      if (noise.shadow_clamp) v = std::max(0.0, v);
      v *= e;
      if (noise.sigma > 0) v += gauss(*rng);
      img[p] = std::max(0.0, v);
    }
  }
  obs.lights = lights;
  obs.scene = scene;
  return obs;
}

std::pair<ObjectScene, LightSet> apply_gbr(const ObjectScene& scene, const LightSet& lights, const GbrParams& g) {
  if (g.lambda == 0) throw ValidationError("apply_gbr: lambda must be nonzero");
  Eigen::Matrix3d G;
  G << 1, 0, 0, 0, 1, 0, g.mu, g.nu, g.lambda;
  const Eigen::Matrix3d G_inv_t = G.inverse().transpose();

  ObjectScene out = scene;
  for (std::size_t p = 0; p < scene.pixels(); ++p) {
    if (!scene.mask[p]) continue;
    const Vec3 n = scene.normal(p);
    const Eigen::Vector3d b = G_inv_t * (Eigen::Vector3d(n.x, n.y, n.z) * scene.albedo[p]);
    const double rho = b.norm();
    if (!(b.z() > 0) || rho == 0) {
      out.mask[p] = 0;
      out.albedo[p] = 0;
      out.set_normal(p, {});
      continue;
    }
    out.albedo[p] = rho;
    out.set_normal(p, {b.x() / rho, b.y() / rho, b.z() / rho});
  }

  LightSet lo;
  lo.directions.reserve(lights.size());
  lo.intensities.reserve(lights.size());
  for (std::size_t j = 0; j < lights.size(); ++j) {
    const Vec3& l = lights.directions[j];
    const Eigen::Vector3d s = G * (Eigen::Vector3d(l.x, l.y, l.z) * lights.intensities[j]);
    const double e = s.norm();
    lo.intensities.push_back(e);
    lo.directions.push_back(e > 0 ? Vec3{s.x() / e, s.y() / e, s.z() / e} : Vec3{});
  }
  return {std::move(out), std::move(lo)};
}

LightSet sample_upper_hemisphere(std::size_t count, Rng& rng) {
  if (count == 0) throw ValidationError("sample_upper_hemisphere: count must be >= 1");
  std::uniform_real_distribution<double> azimuth(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> elevation(-std::numbers::pi / 2, std::numbers::pi / 2);
  std::uniform_real_distribution<double> intensity(kMinIntensity, kMaxIntensity);
  LightSet s;
  for (std::size_t j = 0; j < count; ++j) {
    const double phi = azimuth(rng);
    const double theta = elevation(rng);
    s.directions.push_back(direction_from_angles(phi, theta));
    s.intensities.push_back(intensity(rng));
  }
  return s;
}

double HeightField::height(double x, double y) const {
  double z = 0;
  for (const auto& b : bumps) {
    const double dx = x - b.cx, dy = y - b.cy;
    z += b.amplitude * std::exp(-(dx * dx + dy * dy) / (b.width * b.width));
  }
  return z;
}

Vec3 HeightField::normal(double x, double y) const {
  double gx = 0, gy = 0;
  for (const auto& b : bumps) {
    const double dx = x - b.cx, dy = y - b.cy;
    const double s2 = b.width * b.width;
    const double z = b.amplitude * std::exp(-(dx * dx + dy * dy) / s2);
    gx += -2.0 * dx / s2 * z;
    gy += -2.0 * dy / s2 * z;
  }
  return Vec3{-gx, -gy, 1.0}.normalized();
}

std::pair<double, double> pixel_coords(std::size_t row, std::size_t col, std::size_t height, std::size_t width) {
  const double x = -1.0 + (2.0 * static_cast<double>(col) + 1.0) / static_cast<double>(width);
  const double y = 1.0 - (2.0 * static_cast<double>(row) + 1.0) / static_cast<double>(height);
  return {x, y};
}

ObjectScene scene_from_height_field(const HeightField& field, std::size_t resolution, double mask_threshold) {
  ObjectScene s;
  s.height = s.width = resolution;
  const std::size_t hw = resolution * resolution;
  s.normals.assign(3 * hw, 0.0);
  s.albedo.assign(hw, 0.0);
  s.mask.assign(hw, 0);
  for (std::size_t r = 0; r < resolution; ++r) {
    for (std::size_t c = 0; c < resolution; ++c) {
      const auto [x, y] = pixel_coords(r, c, resolution, resolution);
      const std::size_t p = r * resolution + c;
      if (field.height(x, y) <= mask_threshold) continue;
      s.mask[p] = 1;
      s.albedo[p] = 1.0;
      s.set_normal(p, field.normal(x, y));
    }
  }
  return s;
}

namespace {

constexpr int kMaxSceneRetries = 16;

}  // namespace

ObjectScene generate_blob_scene(const BlobSceneOptions& opt, Rng& rng) {
  if (opt.resolution < 8) throw ValidationError("generate_blob_scene: resolution must be >= 8");
  if (opt.blob_count == 0) throw ValidationError("generate_blob_scene: blob count must be >= 1");
  std::uniform_real_distribution<double> centre(-0.5, 0.5);
  std::uniform_real_distribution<double> amplitude(0.4, 1.0);
  std::uniform_real_distribution<double> width(0.3, 0.6);
  std::uniform_real_distribution<double> anywhere(-1.0, 1.0);
  std::uniform_real_distribution<double> albedo(0.3, 1.0);
  const std::size_t min_pixels = std::max<std::size_t>(16, opt.resolution * opt.resolution / 16);

  for (int attempt = 0; attempt < kMaxSceneRetries; ++attempt) {
    Rng sub(rng());
    HeightField field;
    for (std::size_t b = 0; b < opt.blob_count; ++b) {
      const double cx = centre(sub);
      const double cy = centre(sub);
      const double a = amplitude(sub);
      const double w = width(sub);
      field.bumps.push_back({cx, cy, a, w});
    }
    ObjectScene s = scene_from_height_field(field, opt.resolution, opt.mask_threshold);
    if (s.masked_pixels() < min_pixels) continue;

    const std::size_t regions = std::max<std::size_t>(1, opt.albedo_regions);
    std::vector<std::array<double, 3>> seeds(regions);
    for (auto& sd : seeds) sd = {anywhere(sub), anywhere(sub), albedo(sub)};
    for (std::size_t r = 0; r < s.height; ++r) {
      for (std::size_t c = 0; c < s.width; ++c) {
        const std::size_t p = r * s.width + c;
        if (!s.mask[p]) continue;
        const auto [x, y] = pixel_coords(r, c, s.height, s.width);
        double best = 1e300;
        for (const auto& sd : seeds) {
          const double d = (x - sd[0]) * (x - sd[0]) + (y - sd[1]) * (y - sd[1]);
          if (d < best) {
            best = d;
            s.albedo[p] = sd[2];
          }
        }
      }
    }
    return s;
  }
  throw NumericError("generate_blob_scene: no usable mask after " + std::to_string(kMaxSceneRetries) + " attempts");
}

ObjectScene generate_blob_scene(std::size_t resolution, std::size_t blob_count, Rng& rng) {
  BlobSceneOptions opt;
  opt.resolution = resolution;
  opt.blob_count = blob_count;
  return generate_blob_scene(opt, rng);
}

namespace {

// Singular values of the 3 x k matrix of scaled light vectors.
Eigen::Vector3d light_singular_values(const Eigen::MatrixXd& m) {
  if (m.cols() < 3) return Eigen::Vector3d::Zero();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues().head<3>();
}

bool well_conditioned(const Eigen::Vector3d& sv) {
  return sv(0) > 0 && sv(2) > 1e-8 * sv(0);
}

}  // namespace

WoodhamResult woodham_solve(const PSObservation& obs, const LightSet& lights) {
  const std::size_t n = lights.size();
  if (lights.intensities.size() != n) throw ValidationError("woodham_solve: direction/intensity count mismatch");
  if (obs.count != n) {
    throw ValidationError("woodham_solve: " + std::to_string(obs.count) + " images but " + std::to_string(n) +
                          " lights");
  }
  if (n < 3) {
    throw ValidationError("woodham_solve: need at least 3 lights, got " + std::to_string(n) + " (rank < 3)");
  }
  Eigen::MatrixXd M(3, static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    const Vec3 s = lights.directions[j] * lights.intensities[j];
    M.col(static_cast<Eigen::Index>(j)) << s.x, s.y, s.z;
  }
  const Eigen::Vector3d sv = light_singular_values(M);
  if (!well_conditioned(sv)) {
    std::ostringstream msg;
    msg << "woodham_solve: rank-deficient lighting, singular values " << sv(0) << ", " << sv(1) << ", " << sv(2);
    throw ValidationError(msg.str());
  }

  const std::size_t hw = obs.pixels();
  WoodhamResult res;
  res.condition_number = sv(0) / sv(2);
  res.normals.assign(3 * hw, 0.0);
  res.albedo.assign(hw, 0.0);
  res.mask = obs.mask;
  res.shadow_limited.assign(hw, 0);

  // Pseudo-inverse for the all-lights case is shared by every pixel.
  const Eigen::Matrix3d mmt_all = M * M.transpose();
  const Eigen::LDLT<Eigen::Matrix3d> all_solver(mmt_all);
  Eigen::VectorXd intensities(static_cast<Eigen::Index>(n));
  std::vector<Eigen::Index> lit;
  lit.reserve(n);

  for (std::size_t p = 0; p < hw; ++p) {
    if (!obs.mask[p]) continue;
    lit.clear();
    for (std::size_t j = 0; j < n; ++j) {
      intensities(static_cast<Eigen::Index>(j)) = obs.images[j * hw + p];
      if (obs.images[j * hw + p] > 0) lit.push_back(static_cast<Eigen::Index>(j));
    }
    Eigen::Vector3d b;
    bool solved = false;
    if (lit.size() == n) {
      b = all_solver.solve(M * intensities);
      solved = true;
    } else if (lit.size() >= 3) {
      Eigen::MatrixXd Ms(3, static_cast<Eigen::Index>(lit.size()));
      Eigen::VectorXd is(static_cast<Eigen::Index>(lit.size()));
      for (std::size_t k = 0; k < lit.size(); ++k) {
        Ms.col(static_cast<Eigen::Index>(k)) = M.col(lit[k]);
        is(static_cast<Eigen::Index>(k)) = intensities(lit[k]);
      }
      if (well_conditioned(light_singular_values(Ms))) {
        b = (Ms * Ms.transpose()).ldlt().solve(Ms * is);
        solved = true;
      }
    }
    if (!solved) {
      b = all_solver.solve(M * intensities);
      res.shadow_limited[p] = 1;
    }
    const double rho = b.norm();
    res.albedo[p] = rho;
    if (rho > 0) {
      res.normals[p] = b.x() / rho;
      res.normals[hw + p] = b.y() / rho;
      res.normals[2 * hw + p] = b.z() / rho;
    }
  }
  return res;
}

}  // namespace psnas::scene
