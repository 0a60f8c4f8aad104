// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "psnas/networks.hpp"

#include <algorithm>
#include <cmath>

#include "psnas/error.hpp"

namespace psnas {

namespace {

std::size_t reductions_in(const std::string& layout) {
  return static_cast<std::size_t>(std::count(layout.begin(), layout.end(), 'R'));
}

std::size_t pow2(std::size_t k) { return std::size_t{1} << k; }

void check_input(const ad::Shape& s, std::size_t channels, std::size_t groups, std::size_t factor, const char* who) {
  if (s.size() != 4 || s[1] != channels) {
    throw ShapeError(std::string(who) + ": expected [N," + std::to_string(channels) + ",H,W] input, got " +
                     ad::shape_str(s));
  }
  if (groups == 0 || s[0] == 0 || s[0] % groups != 0) {
    throw ValidationError(std::string(who) + ": batch of " + std::to_string(s[0]) + " cannot be split into " +
                          std::to_string(groups) + " non-empty image sets");
  }
  if (s[2] % factor != 0 || s[3] % factor != 0) {
    throw ValidationError(std::string(who) + ": image size " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                          " is not divisible by " + std::to_string(factor));
  }
}

template <typename T>
nn::ConvBn<T> stem_conv(std::size_t in, std::size_t out, int stride, nn::Rng& rng) {
  return nn::ConvBn<T>(typename nn::ConvBn<T>::Options{in, out, 3, stride, true, false, true}, rng);
}

}  // namespace

std::vector<BlockLayout> LightNetConfig::blocks() const {
  return {{"feature", feature_layout}, {"classifier", classifier_layout}};
}

std::size_t LightNetConfig::reduction_factor() const {
  return static_cast<std::size_t>(stem_stride) * pow2(reductions_in(feature_layout) + reductions_in(classifier_layout));
}

std::vector<BlockLayout> NormalNetConfig::blocks() const {
  return {{"feature", feature_layout}, {"regressor", regressor_layout}};
}

std::size_t NormalNetConfig::reduction_factor() const { return pow2(reductions_in(feature_layout)); }

void LightTargets::push_back(const LightClasses& c) {
  azimuth.push_back(c.azimuth);
  elevation.push_back(c.elevation);
  intensity.push_back(c.intensity);
}

void check_genotype_matches(const Genotype& g, std::size_t channels, const std::vector<BlockLayout>& blocks) {
  if (g.channels != channels) {
    throw ValidationError("genotype was searched with " + std::to_string(g.channels) + " channels, network uses " +
                          std::to_string(channels));
  }
  if (g.blocks != blocks) throw ValidationError("genotype block layout does not match the network configuration");
  validate_genotype(g);
}

// ---- LightNet ----

template <typename T>
LightNet<T>::LightNet(const LightNetConfig& cfg, const Genotype* child, nn::Rng& rng) : cfg_(cfg) {
  if (cfg.stem_stride != 1 && cfg.stem_stride != 2) throw ValidationError("light net: stem stride must be 1 or 2");
  if (child) {
    check_genotype_matches(*child, cfg.cell_channels, cfg.blocks());
    genotype_ = *child;
  }
  const bool affine = child != nullptr;
  stem0_ = stem_conv<T>(1, cfg.stem_channels, cfg.stem_stride, rng);
  stem1_ = stem_conv<T>(cfg.stem_channels, cfg.stem_channels, 1, rng);
  feature_.emplace(cfg.feature_layout, cfg.stem_channels, cfg.cell_channels, affine, child, rng);
  const std::size_t local = feature_->out_channels();
  const std::size_t next_c = feature_->final_cell_channels();
  classifier_.emplace(cfg.classifier_layout, 2 * local, next_c, affine, child, rng);
  const std::size_t pooled = classifier_->out_channels();
  const std::array<std::size_t, 3> classes{36, 36, 20};
  for (std::size_t h = 0; h < 3; ++h) {
    hidden_[h] = nn::Linear<T>(pooled, cfg.head_hidden, rng);
    out_[h] = nn::Linear<T>(cfg.head_hidden, classes[h], rng);
  }
  if (!child) alpha_ = ArchParams<T>::random(rng, 1e-3);
}

template <typename T>
LightLogits<T> LightNet<T>::forward(nn::Context<T>& ctx, const ad::Tensor<T>& images, std::size_t groups,
                                    const ArchWeights<T>& weights) {
  check_input(images.shape(), 1, groups, cfg_.reduction_factor(), "light net");
  if (is_supernet() && !weights.defined()) throw ValidationError("light net: supernet needs mixing weights");
  const std::size_t n = images.dim(0) / groups;
  auto x = stem1_.forward(ctx, stem0_.forward(ctx, images));
  auto local = feature_->forward(ctx, x, x, weights);
  auto global = ad::reduce_max_over_set(ctx.tape, local, groups);
  auto broadcast = ad::repeat_batch(ctx.tape, global, n);
  const std::array<ad::Tensor<T>, 2> parts{local, broadcast};
  auto combined = ad::concat_channels<T>(ctx.tape, parts);
  auto features = ad::global_avg_pool(ctx.tape, classifier_->forward(ctx, combined, combined, weights));
  std::array<ad::Tensor<T>, 3> logits;
  for (std::size_t h = 0; h < 3; ++h) {
    logits[h] = out_[h].forward(ctx, ad::relu(ctx.tape, hidden_[h].forward(ctx, features)));
  }
  return {logits[0], logits[1], logits[2]};
}

template <typename T>
nn::ParamSet<T> LightNet<T>::params() const {
  nn::ParamSet<T> p;
  stem0_.collect(p, "stem0");
  stem1_.collect(p, "stem1");
  feature_->collect(p, "feature");
  classifier_->collect(p, "classifier");
  const char* names[3] = {"azimuth", "elevation", "intensity"};
  for (std::size_t h = 0; h < 3; ++h) {
    hidden_[h].collect(p, std::string("head.") + names[h] + ".fc0");
    out_[h].collect(p, std::string("head.") + names[h] + ".fc1");
  }
  return p;
}

template <typename T>
Genotype LightNet<T>::derive_genotype(bool exclude_zero) const {
  if (!is_supernet()) return *genotype_;
  Genotype g = discretize(alpha_, exclude_zero);
  g.channels = cfg_.cell_channels;
  g.blocks = cfg_.blocks();
  return g;
}

// ---- NormalNet ----

template <typename T>
NormalNet<T>::NormalNet(const NormalNetConfig& cfg, const Genotype* child, nn::Rng& rng) : cfg_(cfg) {
  if (cfg.regressor_layout.find('R') != std::string::npos) {
    throw ValidationError("normal net: the regressor block must not contain reduction cells");
  }
  if (child) {
    check_genotype_matches(*child, cfg.cell_channels, cfg.blocks());
    genotype_ = *child;
  }
  const bool affine = child != nullptr;
  stem0_ = stem_conv<T>(6, cfg.stem_channels, 1, rng);
  stem1_ = stem_conv<T>(cfg.stem_channels, cfg.stem_channels, 1, rng);
  feature_.emplace(cfg.feature_layout, cfg.stem_channels, cfg.cell_channels, affine, child, rng);
  const std::size_t global = feature_->out_channels();
  regressor_.emplace(cfg.regressor_layout, global, feature_->final_cell_channels(), affine, child, rng);
  head_ = nn::PointwiseHead<T>(regressor_->out_channels(), 3, rng);
  if (!child) alpha_ = ArchParams<T>::random(rng, 1e-3);
  // Created last so that enabling it leaves every other initial weight as is.
  if (cfg.auxiliary) aux_head_.emplace(global, 3, rng);
}

template <typename T>
NormalOutput<T> NormalNet<T>::forward(nn::Context<T>& ctx, const ad::Tensor<T>& input, std::size_t groups,
                                      const ArchWeights<T>& weights) {
  if (input.defined() && input.rank() == 4 && input.dim(0) == 0) throw ValidationError("normal net: no images");
  check_input(input.shape(), 6, groups, cfg_.reduction_factor(), "normal net");
  if (is_supernet() && !weights.defined()) throw ValidationError("normal net: supernet needs mixing weights");
  const std::size_t H = input.dim(2), W = input.dim(3);
  auto x = stem1_.forward(ctx, stem0_.forward(ctx, input));
  auto local = feature_->forward(ctx, x, x, weights);
  auto global = ad::reduce_max_over_set(ctx.tape, local, groups);
  auto r = regressor_->forward(ctx, global, global, weights);
  const T eps = T(1e-12);
  NormalOutput<T> out;
  out.normals =
      ad::l2_normalize_channels(ctx.tape, ad::upsample_bilinear(ctx.tape, head_.forward(ctx, r), H, W), eps);
  if (aux_head_ && ctx.training()) {
    out.auxiliary = ad::l2_normalize_channels(
        ctx.tape, ad::upsample_bilinear(ctx.tape, aux_head_->forward(ctx, global), H, W), eps);
  }
  return out;
}

template <typename T>
nn::ParamSet<T> NormalNet<T>::params() const {
  nn::ParamSet<T> p;
  stem0_.collect(p, "stem0");
  stem1_.collect(p, "stem1");
  feature_->collect(p, "feature");
  regressor_->collect(p, "regressor");
  head_.collect(p, "head");
  if (aux_head_) aux_head_->collect(p, "aux_head");
  return p;
}

template <typename T>
Genotype NormalNet<T>::derive_genotype(bool exclude_zero) const {
  if (!is_supernet()) return *genotype_;
  Genotype g = discretize(alpha_, exclude_zero);
  g.channels = cfg_.cell_channels;
  g.blocks = cfg_.blocks();
  return g;
}

// ---- data preparation ----

std::vector<double> normalize_images(std::span<const double> images, std::size_t n, std::span<const std::uint8_t> mask,
                                     std::span<const double> intensities) {
  if (n == 0) throw ValidationError("normalize_images: no images");
  if (intensities.size() != n) throw ValidationError("normalize_images: need one intensity per image");
  const std::size_t hw = mask.size();
  if (images.size() != n * hw) throw ShapeError("normalize_images: image stack does not match the mask size");
  std::vector<double> out(images.begin(), images.end());
  double total = 0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!(intensities[j] > 0)) throw ValidationError("normalize_images: intensities must be positive");
    const double inv = 1.0 / intensities[j];
    for (std::size_t p = 0; p < hw; ++p) {
      out[j * hw + p] *= inv;
      if (mask[p]) {
        total += out[j * hw + p];
        ++count;
      }
    }
  }
  const double mean = count ? total / static_cast<double>(count) : 0.0;
  if (mean > 0) {
    const double s = 0.5 / mean;
    for (auto& v : out) v *= s;
  }
  return out;
}

template <typename T>
void append_normal_input(std::vector<T>& out, std::span<const double> images, std::span<const scene::Vec3> directions,
                         std::size_t height, std::size_t width) {
  const std::size_t hw = height * width;
  const std::size_t n = directions.size();
  if (images.size() != n * hw) throw ShapeError("append_normal_input: images do not match the light count");
  out.reserve(out.size() + n * 6 * hw);
  for (std::size_t j = 0; j < n; ++j) {
    const double* img = images.data() + j * hw;
    for (int c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < hw; ++p) out.push_back(static_cast<T>(img[p]));
    const scene::Vec3& l = directions[j];
    for (double v : {l.x, l.y, l.z}) out.insert(out.end(), hw, static_cast<T>(v));
  }
}

// ---- losses ----

template <typename T>
ad::Tensor<T> light_loss(ad::Tape<T>& tape, const LightLogits<T>& logits, const LightTargets& targets) {
  auto a = ad::softmax_cross_entropy<T>(tape, logits.azimuth, targets.azimuth);
  auto e = ad::softmax_cross_entropy<T>(tape, logits.elevation, targets.elevation);
  auto i = ad::softmax_cross_entropy<T>(tape, logits.intensity, targets.intensity);
  return ad::add(tape, ad::add(tape, a, e), i);
}

template <typename T>
ad::Tensor<T> normal_loss(ad::Tape<T>& tape, const ad::Tensor<T>& pred, const ad::Tensor<T>& truth,
                          const ad::Tensor<T>& mask) {
  return ad::cosine_loss(tape, pred, truth, mask);
}

template <typename T>
ad::Tensor<T> auxiliary_train_loss(ad::Tape<T>& tape, const ad::Tensor<T>& pred, const ad::Tensor<T>& aux_pred,
                                   const ad::Tensor<T>& truth, const ad::Tensor<T>& mask, double lambda_aux) {
  auto main = normal_loss(tape, pred, truth, mask);
  if (lambda_aux == 0 || !aux_pred.defined()) return main;
  return ad::add(tape, main, ad::scale(tape, normal_loss(tape, aux_pred, truth, mask), static_cast<T>(lambda_aux)));
}

scene::LightSet LightEstimate::light_set() const {
  scene::LightSet s;
  for (const auto& l : lights) {
    s.directions.push_back(l.direction);
    s.intensities.push_back(l.intensity);
  }
  return s;
}

std::vector<double> LightEstimate::intensities() const {
  std::vector<double> v;
  for (const auto& l : lights) v.push_back(l.intensity);
  return v;
}

namespace {

template <typename T>
std::vector<int> argmax_rows(const ad::Tensor<T>& logits) {
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto* row = logits.data().data() + r * cols;
    out[r] = static_cast<int>(std::max_element(row, row + cols) - row);
  }
  return out;
}

}  // namespace

template <typename T>
LightEstimate estimate_lights(const LightLogits<T>& logits, const BinningSpec& spec) {
  const auto az = argmax_rows(logits.azimuth);
  const auto el = argmax_rows(logits.elevation);
  const auto in = argmax_rows(logits.intensity);
  LightEstimate est;
  for (std::size_t j = 0; j < az.size(); ++j) {
    const LightClasses c{az[j], el[j], in[j]};
    est.classes.push_back(c);
    est.lights.push_back(decode_light(c, spec));
  }
  return est;
}

// ---- search adapters ----

template <typename T>
ad::Tensor<T> LightSearchModel<T>::loss(ad::Tape<T>& tape, const Batch& b, ad::BnMode mode) {
  nn::Context<T> ctx{tape, mode};
  const ArchWeights<T> w = relax(tape, net_.alpha());
  return light_loss(tape, net_.forward(ctx, b.images, b.groups, w), b.targets);
}

template <typename T>
ad::Tensor<T> NormalSearchModel<T>::loss(ad::Tape<T>& tape, const Batch& b, ad::BnMode mode) {
  nn::Context<T> ctx{tape, mode};
  const ArchWeights<T> w = relax(tape, net_.alpha());
  return normal_loss(tape, net_.forward(ctx, b.input, b.groups, w).normals, b.truth, b.mask);
}

#define PSNAS_INSTANTIATE_NETWORKS(T)                                                                             \
  template class LightNet<T>;                                                                                     \
  template class NormalNet<T>;                                                                                    \
  template void append_normal_input<T>(std::vector<T>&, std::span<const double>, std::span<const scene::Vec3>,    \
                                       std::size_t, std::size_t);                                                 \
  template ad::Tensor<T> light_loss<T>(ad::Tape<T>&, const LightLogits<T>&, const LightTargets&);                \
  template ad::Tensor<T> normal_loss<T>(ad::Tape<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&,                \
                                        const ad::Tensor<T>&);                                                    \
  template ad::Tensor<T> auxiliary_train_loss<T>(ad::Tape<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&,       \
                                                 const ad::Tensor<T>&, const ad::Tensor<T>&, double);             \
  template LightEstimate estimate_lights<T>(const LightLogits<T>&, const BinningSpec&);                           \
  template class LightSearchModel<T>;                                                                             \
  template class NormalSearchModel<T>;

PSNAS_INSTANTIATE_NETWORKS(float)
PSNAS_INSTANTIATE_NETWORKS(double)

}  // namespace psnas
