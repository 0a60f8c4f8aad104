// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_SCENE_HPP_
#define PSNAS_SCENE_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

// Synthetic Lambertian photometric-stereo scenes, rendered with an
// orthographic camera looking down -z (viewing direction v = (0,0,1)).
// All scene-side computation is 64-bit.
namespace psnas::scene {

using Rng = std::mt19937_64;

struct Vec3 {
  double x = 0, y = 0, z = 0;

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const;
  Vec3 normalized() const;
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  bool operator==(const Vec3&) const = default;
};

/// Unit normals (3 planes of H*W), albedo and mask over an H x W grid.
struct ObjectScene {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> normals;     // [3,H,W]
  std::vector<double> albedo;      // [H,W]
  std::vector<std::uint8_t> mask;  // [H,W], 1 = object

  std::size_t pixels() const { return height * width; }
  std::size_t masked_pixels() const;
  Vec3 normal(std::size_t pixel) const;
  void set_normal(std::size_t pixel, const Vec3& n);

  /// Throws ValidationError unless unit normals face the camera and
  /// albedo lies in (0,1] on the mask.
  void validate() const;
};

/// Directional lights: unit directions and positive intensities.
struct LightSet {
  std::vector<Vec3> directions;
  std::vector<double> intensities;

  std::size_t size() const { return directions.size(); }
  /// Unit directions with z > 0 and intensities in [0.2, 2].
  void validate() const;
};

/// G = [[1,0,0],[0,1,0],[mu,nu,lambda]].
struct GbrParams {
  double mu = 0;
  double nu = 0;
  double lambda = 1;
};

struct NoiseSpec {
  double sigma = 0;
  bool shadow_clamp = true;
};

/// Rendered image stack [n,H,W] with its mask and optional ground truth.
struct PSObservation {
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> images;  // [n,H,W]
  std::vector<std::uint8_t> mask;
  std::optional<LightSet> lights;
  std::optional<ObjectScene> scene;

  std::size_t pixels() const { return height * width; }
};

inline constexpr double kMinIntensity = 0.2;
inline constexpr double kMaxIntensity = 2.0;

/// l = (cos(theta) cos(phi), sin(theta), cos(theta) sin(phi)) with azimuth
/// phi in [0, pi] and elevation theta in [-pi/2, pi/2].
Vec3 direction_from_angles(double phi, double theta);
/// Inverse of direction_from_angles for directions with z >= 0.
std::pair<double, double> angles_from_direction(const Vec3& l);

/// I_ij = max(0, rho_i n_i . l_j) e_j + noise, clamped at 0, zero off-mask.
/// rng is required when noise.sigma > 0.
PSObservation render(const ObjectScene& scene, const LightSet& lights, const NoiseSpec& noise = {},
                     Rng* rng = nullptr);

/// Maps scaled normals by G^-T and scaled lights by G. Pixels whose
/// transformed normal has z <= 0 leave the mask. The returned albedo and
/// intensities are whatever the transform produces; they are not clamped to
/// the generator's ranges.
std::pair<ObjectScene, LightSet> apply_gbr(const ObjectScene& scene, const LightSet& lights, const GbrParams& g);

/// Azimuth and elevation uniform over their ranges, intensity uniform in [0.2, 2].
LightSet sample_upper_hemisphere(std::size_t count, Rng& rng);

/// Sum of Gaussian bumps z = a exp(-((x-cx)^2 + (y-cy)^2) / s^2) over
/// image coordinates x, y in [-1, 1] (y up).
struct HeightField {
  struct Bump {
    double cx, cy, amplitude, width;
  };
  std::vector<Bump> bumps;

  double height(double x, double y) const;
  /// normalize(-dz/dx, -dz/dy, 1), computed analytically.
  Vec3 normal(double x, double y) const;
};

struct BlobSceneOptions {
  std::size_t resolution = 32;
  std::size_t blob_count = 3;
  double mask_threshold = 0.1;
  std::size_t albedo_regions = 3;
};

/// Pixel centre of (row, col) in [-1,1]^2 coordinates.
std::pair<double, double> pixel_coords(std::size_t row, std::size_t col, std::size_t height, std::size_t width);

ObjectScene scene_from_height_field(const HeightField& field, std::size_t resolution, double mask_threshold);

/// Random blob scene; retries with fresh draws when the mask comes out
/// degenerate.
ObjectScene generate_blob_scene(const BlobSceneOptions& opt, Rng& rng);
ObjectScene generate_blob_scene(std::size_t resolution, std::size_t blob_count, Rng& rng);

struct WoodhamResult {
  std::vector<double> normals;  // [3,H,W], zero off-mask
  std::vector<double> albedo;   // [H,W]
  std::vector<std::uint8_t> mask;
  /// Pixels with fewer than three lit observations; solved with every
  /// observation, which is exact only when the zeros are grazing rather
  /// than shadowed.
  std::vector<std::uint8_t> shadow_limited;
  double condition_number = 0;
};

/// Calibrated least-squares photometric stereo. Per pixel, the observations
/// with positive intensity are used when at least three of them span
/// rank 3; otherwise all observations are used.
WoodhamResult woodham_solve(const PSObservation& obs, const LightSet& lights);

}  // namespace psnas::scene

#endif  // PSNAS_SCENE_HPP_
