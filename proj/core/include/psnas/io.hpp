// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_IO_HPP_
#define PSNAS_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "psnas/adam.hpp"
#include "psnas/nn.hpp"
#include "psnas/scene.hpp"

namespace psnas::io {

namespace fs = std::filesystem;

// ---- seeding ----

/// Seed of the named sub-stream of a root seed (FNV-1a of the name mixed
/// into the root with splitmix64).
std::uint64_t substream_seed(std::uint64_t root, std::string_view name);
std::mt19937_64 substream(std::uint64_t root, std::string_view name);

// ---- raw arrays ----

void write_f32(const fs::path& path, const std::vector<double>& values);
void write_f32(const fs::path& path, const std::vector<float>& values);
/// Reads a whole file of little-endian f32. If expected > 0, the element
/// count must match.
std::vector<double> read_f32(const fs::path& path, std::size_t expected = 0);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, std::string_view text);

// ---- checkpoints ----

struct ArrayRecord {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;
};

/// Versioned binary container: magic, version, seed, step, string metadata
/// and named f32 arrays, all little-endian with length-prefixed strings.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::map<std::string, std::string> metadata;
  std::vector<ArrayRecord> arrays;

  const ArrayRecord* find(std::string_view name) const;
  const std::string& meta(const std::string& key) const;  // throws if absent
};

void save_checkpoint(const fs::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const fs::path& path);

/// Appends weights and buffers under "<prefix>/<name>".
template <typename T>
void store_params(Checkpoint& ck, const nn::ParamSet<T>& params, const std::string& prefix);
/// Copies stored arrays into the tensors of params; every name must be
/// present with the same shape.
template <typename T>
void restore_params(const Checkpoint& ck, nn::ParamSet<T>& params, const std::string& prefix);

template <typename T>
void store_tensor(Checkpoint& ck, const std::string& name, const ad::Tensor<T>& t);
template <typename T>
void restore_tensor(const Checkpoint& ck, const std::string& name, ad::Tensor<T>& t);

template <typename T>
void store_adam(Checkpoint& ck, const opt::AdamState<T>& state, const std::string& prefix);
template <typename T>
void restore_adam(const Checkpoint& ck, opt::AdamState<T>& state, const std::string& prefix);

// ---- scene container ----

/// One scene directory: scene.json (counts and sizes) plus images.f32
/// [n,H,W], mask.f32 [H,W], and when ground truth is known normals.f32
/// [3,H,W], albedo.f32 [H,W], lights.f32 [n,3], intensities.f32 [n].
void write_scene(const fs::path& dir, const scene::PSObservation& obs);
/// Ground truth arrays are loaded when present. Missing or malformed
/// images/mask throw ValidationError naming the file.
scene::PSObservation read_scene(const fs::path& dir);

}  // namespace psnas::io

#endif  // PSNAS_IO_HPP_
