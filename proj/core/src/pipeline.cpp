// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "psnas/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "psnas/error.hpp"
#include "psnas/io.hpp"

namespace psnas::pipeline {

using json = nlohmann::json;

namespace {

void log(const std::string& msg) { std::cerr << "psnas: " << msg << std::endl; }

void prepare_out_dir(const fs::path& dir, bool force) {
  if (dir.empty()) throw ValidationError("an output directory is required");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ValidationError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ValidationError(dir.string() + " already exists (use --force to overwrite)");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

json light_config_json(const LightNetConfig& c) {
  return {{"stem_channels", c.stem_channels}, {"cell_channels", c.cell_channels},
          {"stem_stride", c.stem_stride},     {"feature_layout", c.feature_layout},
          {"classifier_layout", c.classifier_layout}, {"head_hidden", c.head_hidden}};
}

LightNetConfig light_config_from(const json& j) {
  LightNetConfig c;
  c.stem_channels = j.at("stem_channels");
  c.cell_channels = j.at("cell_channels");
  c.stem_stride = j.at("stem_stride");
  c.feature_layout = j.at("feature_layout");
  c.classifier_layout = j.at("classifier_layout");
  c.head_hidden = j.at("head_hidden");
  return c;
}

json normal_config_json(const NormalNetConfig& c) {
  return {{"stem_channels", c.stem_channels},   {"cell_channels", c.cell_channels},
          {"feature_layout", c.feature_layout}, {"regressor_layout", c.regressor_layout},
          {"auxiliary", c.auxiliary}};
}

NormalNetConfig normal_config_from(const json& j) {
  NormalNetConfig c;
  c.stem_channels = j.at("stem_channels");
  c.cell_channels = j.at("cell_channels");
  c.feature_layout = j.at("feature_layout");
  c.regressor_layout = j.at("regressor_layout");
  c.auxiliary = j.at("auxiliary");
  return c;
}

json manifest_of(const fs::path& dataset) {
  const fs::path p = dataset / "manifest.json";
  if (!fs::exists(p)) throw ValidationError(dataset.string() + " is not a dataset (no manifest.json)");
  try {
    return json::parse(io::read_text(p));
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

// Consecutive groups of at most batch_size scenes.
std::vector<std::vector<const SceneData*>> chunk(const std::vector<const SceneData*>& scenes, std::size_t batch_size) {
  if (batch_size == 0) throw ValidationError("batch size must be >= 1");
  std::vector<std::vector<const SceneData*>> out;
  for (std::size_t i = 0; i < scenes.size(); i += batch_size) {
    out.emplace_back(scenes.begin() + static_cast<std::ptrdiff_t>(i),
                     scenes.begin() + static_cast<std::ptrdiff_t>(std::min(scenes.size(), i + batch_size)));
  }
  return out;
}

std::vector<const SceneData*> pointers(const std::vector<SceneData>& v) {
  std::vector<const SceneData*> p;
  for (const auto& s : v) p.push_back(&s);
  return p;
}

std::size_t check_same_geometry(const std::vector<const SceneData*>& scenes) {
  if (scenes.empty()) throw ValidationError("empty batch");
  const auto& o = scenes.front()->obs;
  for (const auto* s : scenes) {
    if (s->obs.count != o.count || s->obs.height != o.height || s->obs.width != o.width) {
      throw ValidationError("scenes in one batch must share image count and size (" + s->name + ")");
    }
    if (!s->obs.lights || !s->obs.scene) throw ValidationError("scene " + s->name + " has no ground truth");
  }
  return o.count;
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void write_search_log(const fs::path& path, const std::vector<search::SearchLogRow>& rows) {
  std::ofstream f(path);
  f << "epoch,step,train_loss,val_loss\n" << std::setprecision(9);
  for (const auto& r : rows) f << r.epoch << ',' << r.step << ',' << r.train_loss << ',' << r.val_loss << '\n';
}

void write_alpha_trajectory(const fs::path& path, const std::vector<search::Grads<float>>& traj) {
  std::ofstream f(path);
  f << "step,cell,edge,op,alpha\n" << std::setprecision(9);
  for (std::size_t s = 0; s < traj.size(); ++s) {
    for (std::size_t k = 0; k < traj[s].size(); ++k) {
      const char* cell = k == 0 ? "normal" : "reduction";
      for (std::size_t i = 0; i < traj[s][k].size(); ++i) {
        f << s << ',' << cell << ',' << i / kNumOps << ',' << op_name(static_cast<OpKind>(i % kNumOps)) << ','
          << traj[s][k][i] << '\n';
      }
    }
  }
}

}  // namespace

const char* network_name(NetworkKind k) { return k == NetworkKind::kLight ? "light" : "normal"; }

NetworkKind network_from_name(const std::string& s) {
  if (s == "light") return NetworkKind::kLight;
  if (s == "normal") return NetworkKind::kNormal;
  throw ValidationError("unknown network '" + s + "' (expected light or normal)");
}

scene::PSObservation take_images(const scene::PSObservation& obs, std::size_t k) {
  if (k == 0 || k == obs.count) return obs;
  if (k > obs.count) {
    throw ValidationError("requested " + std::to_string(k) + " images but only " + std::to_string(obs.count) +
                          " are available");
  }
  scene::PSObservation out = obs;
  out.count = k;
  out.images.resize(k * obs.pixels());
  if (out.lights) {
    out.lights->directions.resize(k);
    out.lights->intensities.resize(k);
  }
  return out;
}

// ---- data ----

std::vector<SceneData> load_split(const fs::path& dataset, const std::string& split) {
  const json manifest = manifest_of(dataset);
  if (!manifest.contains("splits") || !manifest["splits"].contains(split)) {
    throw ValidationError(dataset.string() + ": manifest has no split '" + split + "'");
  }
  std::vector<SceneData> out;
  for (const auto& name : manifest["splits"][split]) {
    const std::string n = name.get<std::string>();
    out.push_back({n, io::read_scene(dataset / "scenes" / split / n)});
  }
  return out;
}

SceneData relight(const SceneData& s, std::size_t count, double noise_sigma, scene::Rng& rng) {
  if (!s.obs.scene) throw ValidationError(s.name + ": relighting needs the stored geometry");
  const scene::LightSet lights = scene::sample_upper_hemisphere(count, rng);
  return {s.name, scene::render(*s.obs.scene, lights, {noise_sigma, true}, &rng)};
}

LightBatch<float> make_light_batch(const std::vector<const SceneData*>& scenes) {
  const std::size_t n = check_same_geometry(scenes);
  const auto& first = scenes.front()->obs;
  const BinningSpec spec = BinningSpec::standard();
  LightBatch<float> b;
  b.groups = scenes.size();
  std::vector<float> data;
  data.reserve(scenes.size() * n * first.pixels());
  for (const auto* s : scenes) {
    data.insert(data.end(), s->obs.images.begin(), s->obs.images.end());
    for (std::size_t j = 0; j < n; ++j) {
      b.targets.push_back(encode_light(s->obs.lights->directions[j], s->obs.lights->intensities[j], spec));
    }
  }
  b.images = ad::Tensor<float>({scenes.size() * n, 1, first.height, first.width}, std::move(data));
  return b;
}

NormalBatch<float> make_normal_batch(const std::vector<const SceneData*>& scenes) {
  const std::size_t n = check_same_geometry(scenes);
  const auto& first = scenes.front()->obs;
  const std::size_t hw = first.pixels();
  NormalBatch<float> b;
  b.groups = scenes.size();
  std::vector<float> input, truth, mask;
  for (const auto* s : scenes) {
    const auto& o = s->obs;
    const auto normalized = normalize_images(o.images, n, o.mask, o.lights->intensities);
    append_normal_input<float>(input, normalized, o.lights->directions, o.height, o.width);
    truth.insert(truth.end(), o.scene->normals.begin(), o.scene->normals.end());
    for (std::size_t p = 0; p < hw; ++p) mask.push_back(o.mask[p] ? 1.0f : 0.0f);
  }
  b.input = ad::Tensor<float>({scenes.size() * n, 6, first.height, first.width}, std::move(input));
  b.truth = ad::Tensor<float>({scenes.size(), 3, first.height, first.width}, std::move(truth));
  b.mask = ad::Tensor<float>({scenes.size(), 1, first.height, first.width}, std::move(mask));
  return b;
}

// ---- models ----

namespace {

Genotype genotype_of(const io::Checkpoint& ck) { return parse_genotype(ck.meta("genotype")); }

json net_config_of(const io::Checkpoint& ck) {
  try {
    return json::parse(ck.meta("net_config"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint net_config: ") + e.what());
  }
}

void expect_kind(const io::Checkpoint& ck, NetworkKind kind, const fs::path& path) {
  if (ck.meta("kind") != network_name(kind)) {
    throw ValidationError(path.string() + " holds a " + ck.meta("kind") + " network, expected " +
                          network_name(kind));
  }
}

}  // namespace

LightModel load_light_model(const fs::path& checkpoint) {
  const io::Checkpoint ck = io::load_checkpoint(checkpoint);
  expect_kind(ck, NetworkKind::kLight, checkpoint);
  LightModel m;
  m.config = light_config_from(net_config_of(ck));
  const Genotype g = genotype_of(ck);
  nn::Rng rng(ck.seed);
  m.net = std::make_unique<LightNet<float>>(m.config, &g, rng);
  auto params = m.net->params();
  io::restore_params(ck, params, "model");
  return m;
}

NormalModel load_normal_model(const fs::path& checkpoint) {
  const io::Checkpoint ck = io::load_checkpoint(checkpoint);
  expect_kind(ck, NetworkKind::kNormal, checkpoint);
  NormalModel m;
  m.config = normal_config_from(net_config_of(ck));
  const Genotype g = genotype_of(ck);
  nn::Rng rng(ck.seed);
  m.net = std::make_unique<NormalNet<float>>(m.config, &g, rng);
  auto params = m.net->params();
  io::restore_params(ck, params, "model");
  return m;
}

// ---- gen-data ----

void cmd_gen_data(const GenDataConfig& cfg) {
  if (cfg.resolution < 8) throw ValidationError("resolution must be >= 8");
  if (cfg.lights < 1 || cfg.test_lights < 1) throw ValidationError("light counts must be >= 1");
  if (cfg.search_scenes < 2) throw ValidationError("need at least 2 search scenes");
  if (cfg.test_scenes < 1) throw ValidationError("need at least 1 test scene");
  if (cfg.scenes < cfg.search_scenes + cfg.test_scenes + 2) {
    throw ValidationError("need at least " + std::to_string(cfg.search_scenes + cfg.test_scenes + 2) +
                          " scenes for the requested splits");
  }
  if (!(cfg.search_val_fraction > 0 && cfg.search_val_fraction < 1) || !(cfg.val_fraction > 0 && cfg.val_fraction < 1)) {
    throw ValidationError("validation fractions must lie in (0, 1)");
  }
  if (cfg.noise_sigma < 0) throw ValidationError("noise sigma must be >= 0");
  prepare_out_dir(cfg.out, cfg.force);

  auto split_count = [](std::size_t total, double frac) {
    const auto v = static_cast<std::size_t>(std::llround(static_cast<double>(total) * frac));
    return std::clamp<std::size_t>(v, 1, total - 1);
  };
  const std::size_t search_val = split_count(cfg.search_scenes, cfg.search_val_fraction);
  const std::size_t rest = cfg.scenes - cfg.search_scenes - cfg.test_scenes;
  const std::size_t val = split_count(rest, cfg.val_fraction);
  const std::vector<std::pair<std::string, std::size_t>> plan{{"search-train", cfg.search_scenes - search_val},
                                                              {"search-val", search_val},
                                                              {"train", rest - val},
                                                              {"val", val},
                                                              {"test", cfg.test_scenes}};
  json splits = json::object();
  std::size_t index = 0;
  scene::BlobSceneOptions opt;
  opt.resolution = cfg.resolution;
  opt.blob_count = cfg.blob_count;
  const scene::NoiseSpec noise{cfg.noise_sigma, true};
  for (const auto& [split, count] : plan) {
    splits[split] = json::array();
    const std::size_t lights = split == "test" ? cfg.test_lights : cfg.lights;
    for (std::size_t i = 0; i < count; ++i, ++index) {
      std::ostringstream name;
      name << "scene_" << std::setw(4) << std::setfill('0') << index;
      const std::string tag = std::to_string(index);
      auto scene_rng = io::substream(cfg.seed, "data/scene/" + tag);
      auto light_rng = io::substream(cfg.seed, "data/lights/" + tag);
      auto noise_rng = io::substream(cfg.seed, "data/noise/" + tag);
      const scene::ObjectScene s = scene::generate_blob_scene(opt, scene_rng);
      const scene::LightSet l = scene::sample_upper_hemisphere(lights, light_rng);
      io::write_scene(cfg.out / "scenes" / split / name.str(), scene::render(s, l, noise, &noise_rng));
      splits[split].push_back(name.str());
    }
    log("gen-data: " + split + " " + std::to_string(count) + " scenes x " + std::to_string(lights) + " lights");
  }
  json manifest = {{"format", "psnas-dataset"},
                   {"version", 1},
                   {"seed", cfg.seed},
                   {"resolution", cfg.resolution},
                   {"lights", cfg.lights},
                   {"test_lights", cfg.test_lights},
                   {"blob_count", cfg.blob_count},
                   {"noise_sigma", cfg.noise_sigma},
                   {"splits", splits}};
  write_json(cfg.out / "manifest.json", manifest);
  write_json(cfg.out / "run_config.json",
             {{"command", "gen-data"},
              {"out", cfg.out.string()},
              {"seed", cfg.seed},
              {"scenes", cfg.scenes},
              {"resolution", cfg.resolution},
              {"lights", cfg.lights},
              {"test_lights", cfg.test_lights},
              {"test_scenes", cfg.test_scenes},
              {"search_scenes", cfg.search_scenes},
              {"search_val_fraction", cfg.search_val_fraction},
              {"val_fraction", cfg.val_fraction},
              {"blob_count", cfg.blob_count},
              {"noise_sigma", cfg.noise_sigma}});
}

// ---- search ----

namespace {

template <typename Net, typename Model, typename Batch>
SearchOutcome run_search(const SearchRunConfig& cfg, Net& net, const std::vector<Batch>& train,
                         const std::vector<Batch>& val, const json& net_config) {
  Model model(net);
  search::SearchConfig sc;
  sc.xi = cfg.xi;
  sc.order = cfg.order;
  sc.epochs = cfg.epochs;
  sc.seed = io::substream_seed(cfg.seed, "search/batching");
  sc.fd_scale = cfg.fd_scale;
  sc.arch_adam = {cfg.arch_lr, 0.5, 0.999, 1e-8, cfg.arch_weight_decay};
  sc.weight_adam = {cfg.weight_lr, 0.5, 0.999, 1e-8, cfg.weight_decay};

  const fs::path ckpt_path = cfg.out / "supernet.ckpt";
  std::string last_checkpoint;
  Timer timer;
  auto on_epoch = [&](std::size_t epoch, const search::SearchState<float>& state) {
    io::Checkpoint ck;
    ck.seed = cfg.seed;
    ck.step = state.step;
    ck.metadata["kind"] = std::string(network_name(cfg.network)) + "-supernet";
    ck.metadata["net_config"] = net_config.dump();
    ck.metadata["genotype"] = serialize_genotype(net.derive_genotype(cfg.exclude_zero));
    ck.metadata["epoch"] = std::to_string(state.epoch);
    io::store_params(ck, net.params(), "model");
    io::store_tensor(ck, "alpha/normal", net.alpha().normal);
    io::store_tensor(ck, "alpha/reduction", net.alpha().reduction);
    io::store_adam(ck, state.weight_adam, "adam_weights");
    io::store_adam(ck, state.arch_adam, "adam_arch");
    io::save_checkpoint(ckpt_path, ck);
    last_checkpoint = ckpt_path.string();
    log("search: epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) + " done after " +
        fmt(timer.seconds()) + " s");
  };

  search::SearchResult<float> result;
  try {
    result = search::search_loop<Model>(model, train, val, sc, on_epoch);
  } catch (const DivergenceError& e) {
    throw DivergenceError(e.what(), last_checkpoint);
  }
  if (result.fallbacks) log("search: " + std::to_string(result.fallbacks) + " second-order steps fell back to first order");

  SearchOutcome out;
  out.genotype = net.derive_genotype(cfg.exclude_zero);
  out.initial_val_loss = result.initial_val_loss;
  out.final_val_loss = result.final_val_loss;
  io::write_text(cfg.out / "genotype.txt", serialize_genotype(out.genotype));
  write_search_log(cfg.out / "search_log.csv", result.log);
  write_alpha_trajectory(cfg.out / "alpha_trajectory.csv", result.alpha_trajectory);
  io::write_text(cfg.out / "summary.txt", "initial_val_loss = " + fmt(out.initial_val_loss) +
                                              "\nfinal_val_loss = " + fmt(out.final_val_loss) + "\n");
  log("search: val loss " + fmt(out.initial_val_loss) + " -> " + fmt(out.final_val_loss));
  return out;
}

}  // namespace

SearchOutcome cmd_search(const SearchRunConfig& cfg) {
  if (cfg.order == search::SearchOrder::kSecond && !(cfg.xi > 0)) {
    throw ValidationError("second-order search needs --xi > 0");
  }
  const auto train_scenes = load_split(cfg.dataset, "search-train");
  const auto val_scenes = load_split(cfg.dataset, "search-val");
  if (train_scenes.empty() || val_scenes.empty()) throw ValidationError("dataset has empty search splits");
  prepare_out_dir(cfg.out, cfg.force);
  write_json(cfg.out / "run_config.json",
             {{"command", "search"},
              {"network", network_name(cfg.network)},
              {"dataset", cfg.dataset.string()},
              {"out", cfg.out.string()},
              {"seed", cfg.seed},
              {"order", search::order_name(cfg.order)},
              {"xi", cfg.xi},
              {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"fd_scale", cfg.fd_scale},
              {"exclude_zero", cfg.exclude_zero},
              {"arch_lr", cfg.arch_lr},
              {"arch_weight_decay", cfg.arch_weight_decay},
              {"weight_lr", cfg.weight_lr},
              {"weight_decay", cfg.weight_decay},
              {"channels", cfg.channels},
              {"stem_stride", cfg.stem_stride}});

  auto init_rng = io::substream(cfg.seed, "search/init");
  const auto train_groups = chunk(pointers(train_scenes), cfg.batch_size);
  const auto val_groups = chunk(pointers(val_scenes), cfg.batch_size);
  log(std::string("search: ") + network_name(cfg.network) + " supernet, " + std::to_string(train_scenes.size()) +
      " train / " + std::to_string(val_scenes.size()) + " val scenes, order " + search::order_name(cfg.order));

  if (cfg.network == NetworkKind::kLight) {
    LightNetConfig nc;
    nc.stem_channels = nc.cell_channels = cfg.channels;
    nc.stem_stride = cfg.stem_stride;
    LightNet<float> net(nc, nullptr, init_rng);
    std::vector<LightBatch<float>> train, val;
    for (const auto& g : train_groups) train.push_back(make_light_batch(g));
    for (const auto& g : val_groups) val.push_back(make_light_batch(g));
    return run_search<LightNet<float>, LightSearchModel<float>>(cfg, net, train, val, light_config_json(nc));
  }
  NormalNetConfig nc;
  nc.stem_channels = nc.cell_channels = cfg.channels;
  nc.auxiliary = false;  // the auxiliary tower belongs to child training
  NormalNet<float> net(nc, nullptr, init_rng);
  std::vector<NormalBatch<float>> train, val;
  for (const auto& g : train_groups) train.push_back(make_normal_batch(g));
  for (const auto& g : val_groups) val.push_back(make_normal_batch(g));
  return run_search<NormalNet<float>, NormalSearchModel<float>>(cfg, net, train, val, normal_config_json(nc));
}

// ---- train ----

namespace {

// Child network plus the loss used for training and for validation.
class ChildTask {
 public:
  virtual ~ChildTask() = default;
  virtual nn::ParamSet<float> params() const = 0;
  virtual std::size_t batches() const = 0;
  virtual std::size_t val_batches() const = 0;
  /// Training loss on batch i (train split) in the given BN mode.
  virtual ad::Tensor<float> train_loss(ad::Tape<float>& tape, std::size_t i, ad::BnMode mode) = 0;
  /// Validation loss on val batch i, evaluation mode.
  virtual double val_loss(std::size_t i) = 0;
  virtual void rebatch(const std::vector<std::vector<const SceneData*>>& groups) = 0;
};

class LightTask : public ChildTask {
 public:
  LightTask(LightNet<float>& net, const std::vector<std::vector<const SceneData*>>& val) : net_(net) {
    for (const auto& g : val) val_.push_back(make_light_batch(g));
  }
  nn::ParamSet<float> params() const override { return net_.params(); }
  std::size_t batches() const override { return train_.size(); }
  std::size_t val_batches() const override { return val_.size(); }
  ad::Tensor<float> train_loss(ad::Tape<float>& tape, std::size_t i, ad::BnMode mode) override {
    nn::Context<float> ctx{tape, mode};
    return light_loss(tape, net_.forward(ctx, train_[i].images, train_[i].groups), train_[i].targets);
  }
  double val_loss(std::size_t i) override {
    ad::Tape<float> tape(false);
    nn::Context<float> ctx = inference_context(tape);
    return light_loss(tape, net_.forward(ctx, val_[i].images, val_[i].groups), val_[i].targets).item();
  }
  void rebatch(const std::vector<std::vector<const SceneData*>>& groups) override {
    train_.clear();
    for (const auto& g : groups) train_.push_back(make_light_batch(g));
  }

 private:
  LightNet<float>& net_;
  std::vector<LightBatch<float>> train_, val_;
};

class NormalTask : public ChildTask {
 public:
  NormalTask(NormalNet<float>& net, const std::vector<std::vector<const SceneData*>>& val, double lambda_aux)
      : net_(net), lambda_aux_(lambda_aux) {
    for (const auto& g : val) val_.push_back(make_normal_batch(g));
  }
  nn::ParamSet<float> params() const override { return net_.params(); }
  std::size_t batches() const override { return train_.size(); }
  std::size_t val_batches() const override { return val_.size(); }
  ad::Tensor<float> train_loss(ad::Tape<float>& tape, std::size_t i, ad::BnMode mode) override {
    nn::Context<float> ctx{tape, mode};
    const auto& b = train_[i];
    const auto out = net_.forward(ctx, b.input, b.groups);
    return auxiliary_train_loss(tape, out.normals, out.auxiliary, b.truth, b.mask, lambda_aux_);
  }
  double val_loss(std::size_t i) override {
    ad::Tape<float> tape(false);
    nn::Context<float> ctx = inference_context(tape);
    const auto& b = val_[i];
    return normal_loss(tape, net_.forward(ctx, b.input, b.groups).normals, b.truth, b.mask).item();
  }
  void rebatch(const std::vector<std::vector<const SceneData*>>& groups) override {
    train_.clear();
    for (const auto& g : groups) train_.push_back(make_normal_batch(g));
  }

 private:
  NormalNet<float>& net_;
  double lambda_aux_;
  std::vector<NormalBatch<float>> train_, val_;
};

double mean_val_loss(ChildTask& task) {
  double total = 0;
  for (std::size_t i = 0; i < task.val_batches(); ++i) total += task.val_loss(i);
  return total / static_cast<double>(task.val_batches());
}

double mean_train_loss(ChildTask& task) {
  double total = 0;
  for (std::size_t i = 0; i < task.batches(); ++i) {
    ad::Tape<float> tape(false);
    total += task.train_loss(tape, i, ad::BnMode::kTrainNoUpdate).item();
  }
  return total / static_cast<double>(task.batches());
}

}  // namespace

TrainOutcome cmd_train(const TrainRunConfig& cfg) {
  const Genotype genotype = parse_genotype(io::read_text(cfg.genotype));
  const auto train_scenes = load_split(cfg.dataset, "train");
  const auto val_scenes = load_split(cfg.dataset, "val");
  if (train_scenes.empty() || val_scenes.empty()) throw ValidationError("dataset has empty train/val splits");
  if (cfg.lambda_aux < 0) throw ValidationError("lambda_aux must be >= 0");

  auto init_rng = io::substream(cfg.seed, "train/init");
  std::unique_ptr<LightNet<float>> light;
  std::unique_ptr<NormalNet<float>> normal;
  std::unique_ptr<ChildTask> task;
  json net_config;
  const auto val_groups = chunk(pointers(val_scenes), cfg.batch_size);
  if (cfg.network == NetworkKind::kLight) {
    LightNetConfig nc;
    nc.stem_channels = nc.cell_channels = cfg.channels;
    nc.stem_stride = cfg.stem_stride;
    light = std::make_unique<LightNet<float>>(nc, &genotype, init_rng);
    task = std::make_unique<LightTask>(*light, val_groups);
    net_config = light_config_json(nc);
  } else {
    NormalNetConfig nc;
    nc.stem_channels = nc.cell_channels = cfg.channels;
    nc.auxiliary = cfg.auxiliary;
    normal = std::make_unique<NormalNet<float>>(nc, &genotype, init_rng);
    task = std::make_unique<NormalTask>(*normal, val_groups, cfg.lambda_aux);
    net_config = normal_config_json(nc);
  }

  prepare_out_dir(cfg.out, cfg.force);
  const std::size_t epochs = cfg.resolved_epochs();
  write_json(cfg.out / "run_config.json",
             {{"command", "train"},
              {"network", network_name(cfg.network)},
              {"genotype", cfg.genotype.string()},
              {"dataset", cfg.dataset.string()},
              {"out", cfg.out.string()},
              {"seed", cfg.seed},
              {"epochs", epochs},
              {"batch_size", cfg.batch_size},
              {"lr", cfg.resolved_lr()},
              {"weight_decay", cfg.weight_decay},
              {"lambda_aux", cfg.lambda_aux},
              {"auxiliary", cfg.auxiliary},
              {"relight", cfg.relight},
              {"max_images", cfg.resolved_max_images()},
              {"channels", cfg.channels},
              {"stem_stride", cfg.stem_stride}});
  io::write_text(cfg.out / "genotype.txt", serialize_genotype(genotype));

  auto weights = task->params().weight_tensors();
  opt::AdamState<float> adam({cfg.resolved_lr(), 0.5, 0.999, 1e-8, cfg.weight_decay}, weights);
  auto batch_rng = io::substream(cfg.seed, "train/batching");
  auto relight_rng = io::substream(cfg.seed, "train/relight");
  const double noise_sigma = manifest_of(cfg.dataset).value("noise_sigma", 0.0);
  std::vector<const SceneData*> order = pointers(train_scenes);
  std::vector<SceneData> relit;

  const fs::path ckpt_path = cfg.out / "model.ckpt";
  std::string last_checkpoint;
  auto save = [&](std::size_t epoch, double val_loss) {
    io::Checkpoint ck;
    ck.seed = cfg.seed;
    ck.step = adam.step;
    ck.metadata["kind"] = network_name(cfg.network);
    ck.metadata["genotype"] = serialize_genotype(genotype);
    ck.metadata["net_config"] = net_config.dump();
    ck.metadata["epoch"] = std::to_string(epoch);
    ck.metadata["batch_size"] = std::to_string(cfg.batch_size);
    ck.metadata["val_loss"] = fmt(val_loss);
    io::store_params(ck, task->params(), "model");
    io::store_adam(ck, adam, "adam");
    io::save_checkpoint(ckpt_path, ck);
    last_checkpoint = ckpt_path.string();
  };

  TrainOutcome out;
  std::ofstream step_log(cfg.out / "train_log.csv");
  step_log << "epoch,step,train_loss\n" << std::setprecision(9);
  std::ofstream epoch_log(cfg.out / "epoch_log.csv");
  epoch_log << "epoch,train_loss,val_loss\n" << std::setprecision(9);
  log(std::string("train: ") + network_name(cfg.network) + " child, " + std::to_string(weights.size()) +
      " weight tensors, " + std::to_string(task->params().weight_count()) + " parameters, " + std::to_string(epochs) +
      " epochs");

  task->rebatch(chunk(pointers(train_scenes), cfg.batch_size));
  out.initial_train_loss = mean_train_loss(*task);
  out.best_val_loss = std::numeric_limits<double>::infinity();
  Timer timer;
  try {
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), batch_rng);
      if (cfg.relight) {
        relit.clear();
        for (const auto& group : chunk(order, cfg.batch_size)) {
          std::size_t count = group.front()->obs.count;
          if (cfg.resolved_max_images() > count) {
            count = std::uniform_int_distribution<std::size_t>(count, cfg.resolved_max_images())(relight_rng);
          }
          for (const auto* sd : group) relit.push_back(relight(*sd, count, noise_sigma, relight_rng));
        }
        task->rebatch(chunk(pointers(relit), cfg.batch_size));
      } else {
        task->rebatch(chunk(order, cfg.batch_size));
      }
      double total = 0;
      for (std::size_t i = 0; i < task->batches(); ++i) {
        for (auto& w : weights) w.zero_grad();
        ad::Tape<float> tape;
        const auto loss = task->train_loss(tape, i, ad::BnMode::kTrain);
        const double value = search::check_loss(loss.item(), "train");
        tape.backward(loss);
        opt::adam_step<float>(weights, adam);
        total += value;
        step_log << epoch << ',' << adam.step << ',' << value << '\n';
      }
      const double train_loss = total / static_cast<double>(task->batches());
      const double val_loss = search::check_loss(mean_val_loss(*task), "validation");
      if (epoch == 0) {
        // Same stored scenes as the initial measurement.
        task->rebatch(chunk(pointers(train_scenes), cfg.batch_size));
        out.first_epoch_train_loss = mean_train_loss(*task);
      }
      out.epoch_train_loss.push_back(train_loss);
      out.epoch_val_loss.push_back(val_loss);
      epoch_log << epoch << ',' << train_loss << ',' << val_loss << '\n';
      if (val_loss < out.best_val_loss) {
        out.best_val_loss = val_loss;
        save(epoch, val_loss);
      }
      log("train: epoch " + std::to_string(epoch + 1) + "/" + std::to_string(epochs) + " train " + fmt(train_loss) +
          " val " + fmt(val_loss) + " (" + fmt(timer.seconds()) + " s)");
    }
  } catch (const DivergenceError& e) {
    throw DivergenceError(e.what(), last_checkpoint);
  } catch (const NumericError& e) {
    throw DivergenceError(std::string("train: ") + e.what(), last_checkpoint);
  }
  if (epochs == 0) save(0, mean_val_loss(*task));
  return out;
}

double checkpoint_val_loss(const fs::path& checkpoint, const fs::path& dataset) {
  const io::Checkpoint ck = io::load_checkpoint(checkpoint);
  const std::size_t batch_size = std::stoul(ck.meta("batch_size"));
  const auto val_scenes = load_split(dataset, "val");
  const auto groups = chunk(pointers(val_scenes), batch_size);
  if (ck.meta("kind") == "light") {
    LightModel m = load_light_model(checkpoint);
    LightTask task(*m.net, groups);
    return mean_val_loss(task);
  }
  NormalModel m = load_normal_model(checkpoint);
  NormalTask task(*m.net, groups, 0.0);
  return mean_val_loss(task);
}

// ---- eval / infer ----

SceneEstimate infer_scene(LightModel& light, NormalModel& normal, const scene::PSObservation& full,
                          std::size_t num_images, bool true_lights) {
  const scene::PSObservation obs = take_images(full, num_images);
  const std::size_t n = obs.count, H = obs.height, W = obs.width, hw = obs.pixels();
  if (n == 0) throw ValidationError("no images to infer from");
  if (true_lights && !obs.lights) throw ValidationError("ground-truth lights requested but the scene has none");

  ad::Tape<float> tape(false);
  nn::Context<float> ctx = inference_context(tape);
  const ad::Tensor<float> images({n, 1, H, W}, std::vector<float>(obs.images.begin(), obs.images.end()));
  SceneEstimate est;
  est.lights = estimate_lights(light.net->forward(ctx, images, 1), BinningSpec::standard());

  const scene::LightSet used = true_lights ? *obs.lights : est.lights.light_set();
  const auto normalized = normalize_images(obs.images, n, obs.mask, used.intensities);
  std::vector<float> input;
  append_normal_input<float>(input, normalized, used.directions, H, W);
  const auto out = normal.net->forward(ctx, ad::Tensor<float>({n, 6, H, W}, std::move(input)), 1);
  est.normals.assign(3 * hw, 0.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < hw; ++p)
      if (obs.mask[p]) est.normals[c * hw + p] = out.normals[c * hw + p];
  return est;
}

metrics::ObjectReport score_scene(const SceneData& s, const SceneEstimate& est) {
  if (!s.obs.lights || !s.obs.scene) throw ValidationError("scene " + s.name + " has no ground truth");
  const std::size_t k = est.lights.lights.size();
  metrics::ObjectReport r;
  r.name = s.name;
  r.images = k;
  r.pixels = s.obs.scene->masked_pixels();
  std::vector<scene::Vec3> pred;
  for (const auto& l : est.lights.lights) pred.push_back(l.direction);
  const std::span<const scene::Vec3> truth_dirs(s.obs.lights->directions.data(), k);
  const std::span<const double> truth_e(s.obs.lights->intensities.data(), k);
  r.mae_light = metrics::mae_light(pred, truth_dirs);
  r.intensity_error = metrics::intensity_error(est.lights.intensities(), truth_e);
  r.mae_normal = metrics::mae_normal(est.normals, s.obs.scene->normals, s.obs.mask);
  return r;
}

metrics::EvalReport cmd_eval(const EvalRunConfig& cfg) {
  LightModel light = load_light_model(cfg.light_checkpoint);
  NormalModel normal = load_normal_model(cfg.normal_checkpoint);
  const auto scenes = load_split(cfg.dataset, cfg.split);
  if (scenes.empty()) throw ValidationError("split '" + cfg.split + "' is empty");
  for (const auto& s : scenes) {
    if (cfg.num_images > s.obs.count) {
      throw ValidationError("--num-images " + std::to_string(cfg.num_images) + " exceeds the " +
                            std::to_string(s.obs.count) + " images of " + s.name);
    }
  }
  metrics::EvalReport report;
  for (const auto& s : scenes) {
    report.objects.push_back(score_scene(s, infer_scene(light, normal, s.obs, cfg.num_images, cfg.true_lights)));
  }
  report.finalize();
  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    io::write_text(cfg.out / "report.txt", report.to_string());
    write_json(cfg.out / "run_config.json", {{"command", "eval"},
                                             {"light_checkpoint", cfg.light_checkpoint.string()},
                                             {"normal_checkpoint", cfg.normal_checkpoint.string()},
                                             {"dataset", cfg.dataset.string()},
                                             {"split", cfg.split},
                                             {"num_images", cfg.num_images},
                                             {"true_lights", cfg.true_lights}});
  }
  log("eval: " + std::to_string(scenes.size()) + " scenes, MAE_light " + fmt(report.mae_light) + " deg, E_err " +
      fmt(report.intensity_error) + ", MAE_normal " + fmt(report.mae_normal) + " deg");
  return report;
}

void cmd_infer(const InferRunConfig& cfg) {
  LightModel light = load_light_model(cfg.light_checkpoint);
  NormalModel normal = load_normal_model(cfg.normal_checkpoint);
  SceneData s{cfg.images.filename().string(), io::read_scene(cfg.images)};
  if (s.name.empty()) s.name = cfg.images.parent_path().filename().string();
  const SceneEstimate est = infer_scene(light, normal, s.obs, cfg.num_images, false);
  if (cfg.out.empty()) throw ValidationError("an output directory is required");
  fs::create_directories(cfg.out);

  std::ostringstream table;
  table << "# index azimuth_class elevation_class intensity_class phi theta intensity lx ly lz\n"
        << std::setprecision(9);
  for (std::size_t j = 0; j < est.lights.lights.size(); ++j) {
    const auto& c = est.lights.classes[j];
    const auto& l = est.lights.lights[j];
    table << j << ' ' << c.azimuth << ' ' << c.elevation << ' ' << c.intensity << ' ' << l.phi << ' ' << l.theta << ' '
          << l.intensity << ' ' << l.direction.x << ' ' << l.direction.y << ' ' << l.direction.z << '\n';
  }
  io::write_text(cfg.out / "lights.txt", table.str());
  io::write_f32(cfg.out / "normals.f32", est.normals);
  io::write_f32(cfg.out / "mask.f32", std::vector<double>(s.obs.mask.begin(), s.obs.mask.end()));
  write_json(cfg.out / "run_config.json", {{"command", "infer"},
                                           {"light_checkpoint", cfg.light_checkpoint.string()},
                                           {"normal_checkpoint", cfg.normal_checkpoint.string()},
                                           {"images", cfg.images.string()},
                                           {"num_images", cfg.num_images},
                                           {"height", s.obs.height},
                                           {"width", s.obs.width}});
  if (s.obs.lights && s.obs.scene) {
    metrics::EvalReport report;
    report.objects.push_back(score_scene(s, est));
    report.finalize();
    io::write_text(cfg.out / "report.txt", report.to_string());
  }
  log("infer: wrote " + std::to_string(est.lights.lights.size()) + " light estimates and a " +
      std::to_string(s.obs.height) + "x" + std::to_string(s.obs.width) + " normal map to " + cfg.out.string());
}

}  // namespace psnas::pipeline
