// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_PIPELINE_HPP_
#define PSNAS_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "psnas/bilevel.hpp"
#include "psnas/metrics.hpp"
#include "psnas/networks.hpp"
#include "psnas/scene.hpp"

// The gen-data / search / train / eval / infer commands.
namespace psnas::pipeline {

namespace fs = std::filesystem;

enum class NetworkKind { kLight, kNormal };

const char* network_name(NetworkKind k);
NetworkKind network_from_name(const std::string& s);

inline constexpr const char* kSplits[] = {"search-train", "search-val", "train", "val", "test"};

struct GenDataConfig {
  fs::path out;
  std::uint64_t seed = 1;
  std::size_t scenes = 60;
  std::size_t resolution = 32;
  std::size_t lights = 8;        // per search/train/val scene
  std::size_t test_lights = 96;  // per test scene
  std::size_t test_scenes = 20;
  std::size_t search_scenes = 15;
  double search_val_fraction = 0.2;
  double val_fraction = 0.2;
  std::size_t blob_count = 3;
  double noise_sigma = 0.005;
  bool force = false;
};

struct SearchRunConfig {
  NetworkKind network = NetworkKind::kLight;
  fs::path dataset;
  fs::path out;
  std::uint64_t seed = 1;
  search::SearchOrder order = search::SearchOrder::kFirst;
  double xi = 5e-4;
  std::size_t epochs = 3;
  std::size_t batch_size = 4;
  double fd_scale = 0.01;
  bool exclude_zero = true;
  double arch_lr = 3e-4;
  double arch_weight_decay = 1e-3;
  double weight_lr = 5e-4;
  double weight_decay = 3e-4;
  std::size_t channels = 8;
  int stem_stride = 1;
  bool force = false;
};

struct TrainRunConfig {
  NetworkKind network = NetworkKind::kLight;
  fs::path genotype;
  fs::path dataset;
  fs::path out;
  std::uint64_t seed = 1;
  std::size_t epochs = 0;  // 0 = 6 for the light net, 3 for the normal net
  std::size_t batch_size = 1;
  double lr = 0;  // 0 = 2e-3 for the light net, 5e-3 for the normal net
  double weight_decay = 3e-4;
  double lambda_aux = 0.4;
  bool auxiliary = true;
  // Re-render every training scene under fresh random lights each epoch.
  bool relight = true;
  // With relighting, each batch draws its image count uniformly from
  // [stored count, max_images]. 0 = 96 for the light net, 32 for the normal net.
  std::size_t max_images = 0;
  std::size_t channels = 8;
  int stem_stride = 1;
  bool force = false;

  std::size_t resolved_epochs() const { return epochs ? epochs : (network == NetworkKind::kLight ? 6 : 3); }
  std::size_t resolved_max_images() const {
    return max_images ? max_images : (network == NetworkKind::kLight ? 96 : 32);
  }
  double resolved_lr() const { return lr > 0 ? lr : (network == NetworkKind::kLight ? 2e-3 : 5e-3); }
};

struct EvalRunConfig {
  fs::path light_checkpoint;
  fs::path normal_checkpoint;
  fs::path dataset;
  std::string split = "test";
  std::size_t num_images = 0;  // 0 = all
  bool true_lights = false;    // feed ground-truth lights to the normal net
  fs::path out;                // optional; report also goes to stdout by the CLI
};

struct InferRunConfig {
  fs::path light_checkpoint;
  fs::path normal_checkpoint;
  fs::path images;  // one scene directory
  fs::path out;
  std::size_t num_images = 0;
};

/// Forward context for validation and inference. Networks are trained one
/// scene per batch, so layers after the set max-pool only ever saw the
/// statistics of a single scene; inference normalizes each scene the same
/// way instead of using running averages. Running statistics are still
/// tracked and checkpointed.
inline nn::Context<float> inference_context(ad::Tape<float>& tape) {
  return {tape, ad::BnMode::kTrainNoUpdate, true};
}

// ---- data ----

struct SceneData {
  std::string name;
  scene::PSObservation obs;
};

std::vector<SceneData> load_split(const fs::path& dataset, const std::string& split);

/// Raw images of each scene, stacked: [sum n,1,H,W]. All scenes must have
/// the same image count.
LightBatch<float> make_light_batch(const std::vector<const SceneData*>& scenes);
/// Images normalized by true intensities, paired with true directions.
NormalBatch<float> make_normal_batch(const std::vector<const SceneData*>& scenes);

// ---- models ----

struct LightModel {
  LightNetConfig config;
  std::unique_ptr<LightNet<float>> net;
};

struct NormalModel {
  NormalNetConfig config;
  std::unique_ptr<NormalNet<float>> net;
};

LightModel load_light_model(const fs::path& checkpoint);
NormalModel load_normal_model(const fs::path& checkpoint);

// ---- commands ----

void cmd_gen_data(const GenDataConfig& cfg);

struct SearchOutcome {
  Genotype genotype;
  double initial_val_loss = 0;
  double final_val_loss = 0;
};
SearchOutcome cmd_search(const SearchRunConfig& cfg);

struct TrainOutcome {
  // Training-split loss (batch statistics, no updates) at initialization
  // and after the first epoch.
  double initial_train_loss = 0;
  double first_epoch_train_loss = 0;
  double best_val_loss = 0;
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_loss;
};
TrainOutcome cmd_train(const TrainRunConfig& cfg);

/// Validation loss of a trained checkpoint in evaluation mode; the same
/// number cmd_train used to pick the checkpoint.
double checkpoint_val_loss(const fs::path& checkpoint, const fs::path& dataset);

metrics::EvalReport cmd_eval(const EvalRunConfig& cfg);

struct SceneEstimate {
  LightEstimate lights;
  std::vector<double> normals;  // [3,H,W], zero off-mask
};

/// Two-stage inference on one scene. true_lights replaces the light
/// network's estimate with the scene's ground truth.
SceneEstimate infer_scene(LightModel& light, NormalModel& normal, const scene::PSObservation& obs,
                          std::size_t num_images = 0, bool true_lights = false);

/// Per-object metrics of an estimate against the scene's ground truth.
metrics::ObjectReport score_scene(const SceneData& s, const SceneEstimate& est);

void cmd_infer(const InferRunConfig& cfg);

/// The scene's stored geometry re-rendered under `count` fresh random lights.
SceneData relight(const SceneData& s, std::size_t count, double noise_sigma, scene::Rng& rng);

/// Keeps the first k images (and lights) of an observation.
scene::PSObservation take_images(const scene::PSObservation& obs, std::size_t k);

}  // namespace psnas::pipeline

#endif  // PSNAS_PIPELINE_HPP_
