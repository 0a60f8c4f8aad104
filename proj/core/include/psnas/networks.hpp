// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_NETWORKS_HPP_
#define PSNAS_NETWORKS_HPP_

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psnas/binning.hpp"
#include "psnas/cell.hpp"
#include "psnas/nn.hpp"
#include "psnas/scene.hpp"
#include "psnas/search_space.hpp"

namespace psnas {

struct LightNetConfig {
  std::size_t stem_channels = 8;
  std::size_t cell_channels = 8;
  int stem_stride = 1;
  std::string feature_layout = "NRNRN";
  std::string classifier_layout = "NR";
  std::size_t head_hidden = 64;

  std::vector<BlockLayout> blocks() const;
  /// Input sides must be divisible by this.
  std::size_t reduction_factor() const;
};

struct NormalNetConfig {
  std::size_t stem_channels = 8;
  std::size_t cell_channels = 8;
  std::string feature_layout = "NRNRN";
  std::string regressor_layout = "NNN";
  bool auxiliary = true;

  std::vector<BlockLayout> blocks() const;
  std::size_t reduction_factor() const;
};

template <typename T>
struct LightLogits {
  ad::Tensor<T> azimuth;    // [N,36]
  ad::Tensor<T> elevation;  // [N,36]
  ad::Tensor<T> intensity;  // [N,20]
};

struct LightTargets {
  std::vector<int> azimuth;
  std::vector<int> elevation;
  std::vector<int> intensity;

  void push_back(const LightClasses& c);
  std::size_t size() const { return azimuth.size(); }
};

/// Checks that a genotype was searched for the given channel width and
/// block layout.
void check_genotype_matches(const Genotype& g, std::size_t channels, const std::vector<BlockLayout>& blocks);

/// Stem -> shared feature block per image -> max over the image set ->
/// concat(local, global) -> classifier block -> pooled features -> three
/// two-layer heads (azimuth, elevation, intensity).
template <typename T>
class LightNet {
 public:
  /// child == nullptr builds the searchable supernet.
  LightNet(const LightNetConfig& cfg, const Genotype* child, nn::Rng& rng);

  /// images: [groups*n,1,H,W]; consecutive runs of n images form a set.
  LightLogits<T> forward(nn::Context<T>& ctx, const ad::Tensor<T>& images, std::size_t groups,
                         const ArchWeights<T>& weights = {});

  bool is_supernet() const { return !genotype_.has_value(); }
  ArchParams<T>& alpha() { return alpha_; }
  const ArchParams<T>& alpha() const { return alpha_; }
  const std::optional<Genotype>& genotype() const { return genotype_; }
  const LightNetConfig& config() const { return cfg_; }

  /// Weights and BN buffers, excluding architecture parameters.
  nn::ParamSet<T> params() const;
  /// Discretized supernet architecture, tagged with this net's layout.
  Genotype derive_genotype(bool exclude_zero = true) const;

 private:
  LightNetConfig cfg_;
  std::optional<Genotype> genotype_;
  nn::ConvBn<T> stem0_, stem1_;
  std::optional<CellStack<T>> feature_, classifier_;
  std::array<nn::Linear<T>, 3> hidden_, out_;
  ArchParams<T> alpha_;
};

template <typename T>
struct NormalOutput {
  ad::Tensor<T> normals;    // [G,3,H,W], unit per pixel
  ad::Tensor<T> auxiliary;  // same shape, defined in training modes only
};

/// Stem -> shared feature block per (image, light) pair -> max over the set
/// -> regressor block -> 1x1 head -> bilinear upsample -> per-pixel
/// normalization. The auxiliary tower reads the aggregated features.
template <typename T>
class NormalNet {
 public:
  NormalNet(const NormalNetConfig& cfg, const Genotype* child, nn::Rng& rng);

  /// input: [groups*n,6,H,W] from make_normal_input.
  NormalOutput<T> forward(nn::Context<T>& ctx, const ad::Tensor<T>& input, std::size_t groups,
                          const ArchWeights<T>& weights = {});

  bool is_supernet() const { return !genotype_.has_value(); }
  ArchParams<T>& alpha() { return alpha_; }
  const ArchParams<T>& alpha() const { return alpha_; }
  const std::optional<Genotype>& genotype() const { return genotype_; }
  const NormalNetConfig& config() const { return cfg_; }

  nn::ParamSet<T> params() const;
  Genotype derive_genotype(bool exclude_zero = true) const;

 private:
  NormalNetConfig cfg_;
  std::optional<Genotype> genotype_;
  nn::ConvBn<T> stem0_, stem1_;
  std::optional<CellStack<T>> feature_, regressor_;
  nn::PointwiseHead<T> head_;
  std::optional<nn::PointwiseHead<T>> aux_head_;
  ArchParams<T> alpha_;
};

/// Image j divided by e_j, then one common scale so that the masked mean
/// of the whole stack is 0.5. images: [n,H,W].
std::vector<double> normalize_images(std::span<const double> images, std::size_t n, std::span<const std::uint8_t> mask,
                                     std::span<const double> intensities);

/// Appends [n,6,H,W]: each normalized image replicated to 3 channels, then
/// its light direction broadcast over the image.
template <typename T>
void append_normal_input(std::vector<T>& out, std::span<const double> images, std::span<const scene::Vec3> directions,
                         std::size_t height, std::size_t width);

template <typename T>
ad::Tensor<T> light_loss(ad::Tape<T>& tape, const LightLogits<T>& logits, const LightTargets& targets);

/// Mean over masked pixels of 1 - <pred, truth>.
template <typename T>
ad::Tensor<T> normal_loss(ad::Tape<T>& tape, const ad::Tensor<T>& pred, const ad::Tensor<T>& truth,
                          const ad::Tensor<T>& mask);

template <typename T>
ad::Tensor<T> auxiliary_train_loss(ad::Tape<T>& tape, const ad::Tensor<T>& pred, const ad::Tensor<T>& aux_pred,
                                   const ad::Tensor<T>& truth, const ad::Tensor<T>& mask, double lambda_aux = 0.4);

struct LightEstimate {
  std::vector<LightClasses> classes;
  std::vector<DecodedLight> lights;

  scene::LightSet light_set() const;
  std::vector<double> intensities() const;
};

/// Argmax of each head, decoded to bin centres.
template <typename T>
LightEstimate estimate_lights(const LightLogits<T>& logits, const BinningSpec& spec);

// ---- search adapters ----

template <typename T>
struct LightBatch {
  ad::Tensor<T> images;  // [groups*n,1,H,W]
  std::size_t groups = 0;
  LightTargets targets;
};

template <typename T>
struct NormalBatch {
  ad::Tensor<T> input;  // [groups*n,6,H,W]
  std::size_t groups = 0;
  ad::Tensor<T> truth;  // [groups,3,H,W]
  ad::Tensor<T> mask;   // [groups,1,H,W]
};

template <typename T>
class LightSearchModel {
 public:
  using Scalar = T;
  using Batch = LightBatch<T>;

  explicit LightSearchModel(LightNet<T>& net) : net_(net) {}
  ad::Tensor<T> loss(ad::Tape<T>& tape, const Batch& b, ad::BnMode mode);
  std::vector<ad::Tensor<T>> weights() const { return net_.params().weight_tensors(); }
  std::vector<ad::Tensor<T>> arch() const { return {net_.alpha().normal, net_.alpha().reduction}; }

 private:
  LightNet<T>& net_;
};

template <typename T>
class NormalSearchModel {
 public:
  using Scalar = T;
  using Batch = NormalBatch<T>;

  explicit NormalSearchModel(NormalNet<T>& net) : net_(net) {}
  ad::Tensor<T> loss(ad::Tape<T>& tape, const Batch& b, ad::BnMode mode);
  std::vector<ad::Tensor<T>> weights() const { return net_.params().weight_tensors(); }
  std::vector<ad::Tensor<T>> arch() const { return {net_.alpha().normal, net_.alpha().reduction}; }

 private:
  NormalNet<T>& net_;
};

}  // namespace psnas

#endif  // PSNAS_NETWORKS_HPP_
