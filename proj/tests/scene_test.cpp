// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "psnas/error.hpp"
#include "psnas/metrics.hpp"
#include "psnas/scene.hpp"

namespace psnas::scene {
namespace {

constexpr double kPi = std::numbers::pi;

ObjectScene flat_pixel(const Vec3& n, double rho) {
  ObjectScene s;
  s.height = s.width = 1;
  s.normals = {n.x, n.y, n.z};
  s.albedo = {rho};
  s.mask = {1};
  return s;
}

LightSet lights_of(std::vector<Vec3> dirs, std::vector<double> e) { return {std::move(dirs), std::move(e)}; }

TEST(Render, WorkedExamples) {
  EXPECT_DOUBLE_EQ(render(flat_pixel({0, 0, 1}, 1), lights_of({{0, 0, 1}}, {1})).images[0], 1.0);
  EXPECT_DOUBLE_EQ(render(flat_pixel({0, 0, 1}, 1), lights_of({{1, 0, 0}}, {1})).images[0], 0.0);
  EXPECT_NEAR(render(flat_pixel({0, 0, 1}, 0.5), lights_of({{0.6, 0, 0.8}}, {2})).images[0], 0.8, 1e-15);
}

TEST(Render, ShadowClampAndMask) {
  ObjectScene s = flat_pixel({0.6, 0, 0.8}, 1);
  const LightSet l = lights_of({{-0.8, 0, 0.6}, {-1, 0, 0}}, {1, 1});
  const auto clamped = render(s, l);
  EXPECT_NEAR(clamped.images[0], 0.0, 1e-15);
  EXPECT_EQ(clamped.images[1], 0.0);
  // Pixel values are non-negative with or without the attached-shadow clamp.
  EXPECT_EQ(render(s, l, NoiseSpec{0, false}).images[1], 0.0);
  s.mask[0] = 0;
  EXPECT_EQ(render(s, lights_of({{0, 0, 1}}, {1})).images[0], 0.0);
}

TEST(Render, NoiseNeedsRngAndIsReproducible) {
  Rng rng(1);
  const ObjectScene s = generate_blob_scene(16, 2, rng);
  const LightSet l = sample_upper_hemisphere(4, rng);
  EXPECT_THROW(render(s, l, NoiseSpec{0.01, true}), ValidationError);
  Rng a(5), b(5);
  EXPECT_EQ(render(s, l, NoiseSpec{0.01, true}, &a).images, render(s, l, NoiseSpec{0.01, true}, &b).images);
}

TEST(Angles, MappingExamples) {
  const Vec3 up = direction_from_angles(kPi / 2, 0);
  EXPECT_NEAR(up.x, 0, 1e-15);
  EXPECT_NEAR(up.y, 0, 1e-15);
  EXPECT_NEAR(up.z, 1, 1e-15);
  const Vec3 side = direction_from_angles(0, 0);
  EXPECT_NEAR(side.x, 1, 1e-15);
  EXPECT_NEAR(side.z, 0, 1e-15);
  for (double phi : {0.1, 1.0, 2.5})
    for (double theta : {-1.2, 0.0, 0.7}) {
      const auto [p, t] = angles_from_direction(direction_from_angles(phi, theta));
      EXPECT_NEAR(p, phi, 1e-12);
      EXPECT_NEAR(t, theta, 1e-12);
    }
}

TEST(Lights, SamplesCoverTheUpperHemisphere) {
  Rng rng(2);
  const LightSet s = sample_upper_hemisphere(10000, rng);
  EXPECT_NO_THROW(s.validate());
  double mean_x = 0, mean_y = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    EXPECT_NEAR(s.directions[j].norm(), 1.0, 1e-12);
    EXPECT_GE(s.directions[j].z, 0.0);
    EXPECT_GE(s.intensities[j], kMinIntensity);
    EXPECT_LE(s.intensities[j], kMaxIntensity);
    mean_x += s.directions[j].x;
    mean_y += s.directions[j].y;
  }
  // Symmetric ranges give zero-mean x and y.
  EXPECT_NEAR(mean_x / 1e4, 0.0, 0.02);
  EXPECT_NEAR(mean_y / 1e4, 0.0, 0.02);
  EXPECT_THROW(sample_upper_hemisphere(0, rng), ValidationError);
}

TEST(Gbr, IdentityLeavesSceneUnchanged) {
  Rng rng(3);
  const ObjectScene s = generate_blob_scene(16, 3, rng);
  const LightSet l = sample_upper_hemisphere(5, rng);
  const auto [s2, l2] = apply_gbr(s, l, {0, 0, 1});
  EXPECT_EQ(s2.mask, s.mask);
  for (std::size_t i = 0; i < s.normals.size(); ++i) EXPECT_NEAR(s2.normals[i], s.normals[i], 1e-15);
  for (std::size_t i = 0; i < s.albedo.size(); ++i) EXPECT_NEAR(s2.albedo[i], s.albedo[i], 1e-15);
  for (std::size_t j = 0; j < l.size(); ++j) {
    EXPECT_NEAR(l2.intensities[j], l.intensities[j], 1e-15);
    EXPECT_NEAR(l2.directions[j].x, l.directions[j].x, 1e-15);
  }
}

TEST(Gbr, LambdaTwoHalvesAlbedo) {
  const auto [s, l] = apply_gbr(flat_pixel({0, 0, 1}, 1), lights_of({{0, 0, 1}}, {1}), {0, 0, 2});
  EXPECT_NEAR(s.albedo[0], 0.5, 1e-15);
  EXPECT_NEAR(s.normals[2], 1.0, 1e-15);
  EXPECT_NEAR(l.intensities[0], 2.0, 1e-15);
}

TEST(Gbr, RenderingIsInvariant) {
  Rng rng(4);
  std::uniform_real_distribution<double> mn(-1, 1), lam(0.5, 2);
  for (int trial = 0; trial < 50; ++trial) {
    const ObjectScene s = generate_blob_scene(16, 1 + trial % 4, rng);
    const LightSet l = sample_upper_hemisphere(6, rng);
    const GbrParams g{mn(rng), mn(rng), lam(rng)};
    const auto [s2, l2] = apply_gbr(s, l, g);
    const auto a = render(s, l), b = render(s2, l2);
    for (std::size_t j = 0; j < l.size(); ++j)
      for (std::size_t p = 0; p < s.pixels(); ++p) {
        if (!s2.mask[p]) continue;
        EXPECT_NEAR(b.images[j * s.pixels() + p], a.images[j * s.pixels() + p], 1e-10);
      }
  }
}

TEST(HeightField, CentredBumpApexFacesCamera) {
  const HeightField f{{{0, 0, 1.0, 0.5}}};
  const Vec3 n = f.normal(0, 0);
  EXPECT_NEAR(n.x, 0, 1e-15);
  EXPECT_NEAR(n.y, 0, 1e-15);
  EXPECT_NEAR(n.z, 1, 1e-15);
}

TEST(HeightField, AnalyticBumpNormal) {
  const HeightField f{{{0, 0, 1.0, 1.0}}};  // z = exp(-r^2)
  const Vec3 n = f.normal(0.5, 0);
  const Vec3 expect = Vec3{2 * 0.5 * std::exp(-0.25), 0, 1}.normalized();
  EXPECT_NEAR(n.x, expect.x, 1e-14);
  EXPECT_NEAR(n.y, expect.y, 1e-14);
  EXPECT_NEAR(n.z, expect.z, 1e-14);
  // Central differences of the height agree with the analytic slope.
  const double h = 1e-6;
  const double dzdx = (f.height(0.5 + h, 0) - f.height(0.5 - h, 0)) / (2 * h);
  EXPECT_NEAR(-dzdx / 1.0, n.x / n.z, 1e-8);
}

TEST(BlobScene, PropertyValidScenes) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const ObjectScene s = generate_blob_scene(16 + 8 * (trial % 3), 1 + trial % 5, rng);
    EXPECT_NO_THROW(s.validate());
    EXPECT_GT(s.masked_pixels(), 0u);
    for (std::size_t p = 0; p < s.pixels(); ++p) {
      if (s.mask[p]) {
        EXPECT_NEAR(s.normal(p).norm(), 1.0, 1e-12);
        EXPECT_GT(s.normal(p).z, 0.0);
      }
    }
  }
  EXPECT_THROW(generate_blob_scene(4, 1, rng), ValidationError);
}

TEST(BlobScene, SeedDeterminesScene) {
  Rng a(9), b(9);
  const auto s1 = generate_blob_scene(16, 3, a);
  const auto s2 = generate_blob_scene(16, 3, b);
  EXPECT_EQ(s1.normals, s2.normals);
  EXPECT_EQ(s1.albedo, s2.albedo);
  EXPECT_EQ(s1.mask, s2.mask);
}

TEST(Woodham, RecoversNoiselessScenes) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const ObjectScene s = generate_blob_scene(16, 3, rng);
    const LightSet l = sample_upper_hemisphere(4 + trial % 8, rng);
    const auto res = woodham_solve(render(s, l), l);
    std::vector<std::uint8_t> exact(s.mask);
    for (std::size_t p = 0; p < s.pixels(); ++p) exact[p] = s.mask[p] && !res.shadow_limited[p];
    if (std::count(exact.begin(), exact.end(), 1) == 0) continue;
    EXPECT_LT(metrics::mae_normal(res.normals, s.normals, exact), 1e-3);
    for (std::size_t p = 0; p < s.pixels(); ++p) {
      if (!exact[p]) continue;
      EXPECT_NEAR(res.albedo[p], s.albedo[p], 1e-9);
    }
  }
}

TEST(Woodham, RejectsTwoLights) {
  Rng rng(7);
  const ObjectScene s = generate_blob_scene(16, 2, rng);
  const LightSet l = sample_upper_hemisphere(2, rng);
  EXPECT_THROW(woodham_solve(render(s, l), l), ValidationError);
}

TEST(Woodham, RejectsCoplanarLights) {
  const ObjectScene s = flat_pixel({0, 0, 1}, 1);
  const LightSet l = lights_of({{0, 0, 1}, {1, 0, 0}, {std::sqrt(0.5), 0, std::sqrt(0.5)}}, {1, 1, 1});
  EXPECT_THROW(woodham_solve(render(s, l), l), ValidationError);
}

TEST(Woodham, AxisAlignedLightsReadOffTheScaledNormal) {
  const ObjectScene s = flat_pixel({0, 0, 1}, 1);
  const LightSet l = lights_of({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {1, 1, 1});
  const auto obs = render(s, l);
  EXPECT_EQ(obs.images, (std::vector<double>{0, 0, 1}));
  const auto res = woodham_solve(obs, l);
  EXPECT_NEAR(res.normals[0], 0, 1e-12);
  EXPECT_NEAR(res.normals[1], 0, 1e-12);
  EXPECT_NEAR(res.normals[2], 1, 1e-12);
  EXPECT_NEAR(res.albedo[0], 1, 1e-12);
}

}  // namespace
}  // namespace psnas::scene
