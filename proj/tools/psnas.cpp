// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

// psnas: data generation, architecture search, training, evaluation and
// inference for learned uncalibrated photometric stereo.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "psnas/error.hpp"
#include "psnas/pipeline.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;

namespace pl = psnas::pipeline;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Architecture search and training for uncalibrated photometric stereo"};
  app.require_subcommand(1);

  // gen-data
  pl::GenDataConfig gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--out", gen_out, "Output dataset directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Root seed")->capture_default_str();
  gen_cmd->add_option("--scenes", gen.scenes, "Total number of scenes")->capture_default_str();
  gen_cmd->add_option("--resolution", gen.resolution, "Image side in pixels")->capture_default_str();
  gen_cmd->add_option("--lights", gen.lights, "Lights per search/train/val scene")->capture_default_str();
  gen_cmd->add_option("--test-lights", gen.test_lights, "Lights per test scene")->capture_default_str();
  gen_cmd->add_option("--test-scenes", gen.test_scenes, "Scenes in the test split")->capture_default_str();
  gen_cmd->add_option("--search-scenes", gen.search_scenes, "Scenes reserved for search")->capture_default_str();
  gen_cmd->add_option("--search-val-fraction", gen.search_val_fraction, "Share of search scenes used for validation")
      ->capture_default_str();
  gen_cmd->add_option("--val-fraction", gen.val_fraction, "Share of training scenes used for validation")
      ->capture_default_str();
  gen_cmd->add_option("--blob-count", gen.blob_count, "Gaussian bumps per height field")->capture_default_str();
  gen_cmd->add_option("--noise-sigma", gen.noise_sigma, "Gaussian image noise")->capture_default_str();
  gen_cmd->add_flag("--force", gen.force, "Overwrite an existing output directory");

  // search
  pl::SearchRunConfig srch;
  std::string srch_net = "light", srch_order = "first", srch_dataset, srch_out;
  auto* search_cmd = app.add_subcommand("search", "Search cell architectures on the search splits");
  search_cmd->add_option("--network", srch_net, "light or normal")->capture_default_str();
  search_cmd->add_option("--dataset", srch_dataset, "Dataset directory")->required();
  search_cmd->add_option("--out", srch_out, "Output directory")->required();
  search_cmd->add_option("--seed", srch.seed, "Root seed")->capture_default_str();
  search_cmd->add_option("--order", srch_order, "first or second")->capture_default_str();
  search_cmd->add_option("--xi", srch.xi, "Inner learning rate of the second-order step")->capture_default_str();
  search_cmd->add_option("--epochs", srch.epochs, "Search epochs")->capture_default_str();
  search_cmd->add_option("--batch-size", srch.batch_size, "Scenes per batch")->capture_default_str();
  search_cmd->add_option("--fd-scale", srch.fd_scale, "Finite-difference scale")->capture_default_str();
  search_cmd->add_option("--exclude-zero", srch.exclude_zero, "Exclude the zero op when discretizing")
      ->capture_default_str();
  search_cmd->add_option("--arch-lr", srch.arch_lr, "Architecture learning rate")->capture_default_str();
  search_cmd->add_option("--arch-weight-decay", srch.arch_weight_decay, "Architecture weight decay")
      ->capture_default_str();
  search_cmd->add_option("--weight-lr", srch.weight_lr, "Weight learning rate")->capture_default_str();
  search_cmd->add_option("--weight-decay", srch.weight_decay, "Weight decay")->capture_default_str();
  search_cmd->add_option("--channels", srch.channels, "Stem and first cell channels")->capture_default_str();
  search_cmd->add_option("--stem-stride", srch.stem_stride, "Light-net stem stride (1 or 2)")->capture_default_str();
  search_cmd->add_flag("--force", srch.force, "Overwrite an existing output directory");

  // train
  pl::TrainRunConfig trn;
  std::string trn_net = "light", trn_genotype, trn_dataset, trn_out;
  auto* train_cmd = app.add_subcommand("train", "Train a discrete network from a genotype");
  train_cmd->add_option("--network", trn_net, "light or normal")->capture_default_str();
  train_cmd->add_option("--genotype", trn_genotype, "Genotype file")->required();
  train_cmd->add_option("--dataset", trn_dataset, "Dataset directory")->required();
  train_cmd->add_option("--out", trn_out, "Output directory")->required();
  train_cmd->add_option("--seed", trn.seed, "Root seed")->capture_default_str();
  train_cmd->add_option("--epochs", trn.epochs, "Epochs (0: 6 for light, 3 for normal)")->capture_default_str();
  train_cmd->add_option("--batch-size", trn.batch_size, "Scenes per batch")->capture_default_str();
  train_cmd->add_option("--lr", trn.lr, "Learning rate (0: 2e-3 for light, 5e-3 for normal)")->capture_default_str();
  train_cmd->add_option("--weight-decay", trn.weight_decay, "Weight decay")->capture_default_str();
  train_cmd->add_option("--lambda-aux", trn.lambda_aux, "Auxiliary loss weight")->capture_default_str();
  train_cmd->add_option("--auxiliary", trn.auxiliary, "Attach the auxiliary tower (normal net)")
      ->capture_default_str();
  train_cmd->add_option("--relight", trn.relight, "Re-render training scenes under fresh lights every epoch")
      ->capture_default_str();
  train_cmd->add_option("--max-images", trn.max_images, "Largest relit image count per batch (0: 96 for light, 32 for normal)")
      ->capture_default_str();
  train_cmd->add_option("--channels", trn.channels, "Stem and first cell channels")->capture_default_str();
  train_cmd->add_option("--stem-stride", trn.stem_stride, "Light-net stem stride (1 or 2)")->capture_default_str();
  train_cmd->add_flag("--force", trn.force, "Overwrite an existing output directory");

  // eval
  pl::EvalRunConfig ev;
  std::string ev_light, ev_normal, ev_dataset, ev_out;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate the two-stage pipeline on a split");
  eval_cmd->add_option("--light-ckpt", ev_light, "Light network checkpoint")->required();
  eval_cmd->add_option("--normal-ckpt", ev_normal, "Normal network checkpoint")->required();
  eval_cmd->add_option("--dataset", ev_dataset, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.split, "Split to evaluate")->capture_default_str();
  eval_cmd->add_option("--num-images", ev.num_images, "Use the first k images per scene (0: all)")
      ->capture_default_str();
  eval_cmd->add_flag("--true-lights", ev.true_lights, "Feed ground-truth lights to the normal network");
  eval_cmd->add_option("--out", ev_out, "Directory for report.txt and run_config.json");

  // infer
  pl::InferRunConfig inf;
  std::string inf_light, inf_normal, inf_images, inf_out;
  auto* infer_cmd = app.add_subcommand("infer", "Estimate lights and normals for one scene directory");
  infer_cmd->add_option("--light-ckpt", inf_light, "Light network checkpoint")->required();
  infer_cmd->add_option("--normal-ckpt", inf_normal, "Normal network checkpoint")->required();
  infer_cmd->add_option("--images", inf_images, "Scene directory (scene.json, images.f32, mask.f32)")->required();
  infer_cmd->add_option("--out", inf_out, "Output directory")->required();
  infer_cmd->add_option("--num-images", inf.num_images, "Use the first k images (0: all)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*gen_cmd) {
      gen.out = gen_out;
      pl::cmd_gen_data(gen);
    } else if (*search_cmd) {
      srch.network = pl::network_from_name(srch_net);
      if (srch_order != "first" && srch_order != "second") {
        throw psnas::ValidationError("--order must be first or second");
      }
      srch.order = srch_order == "first" ? psnas::search::SearchOrder::kFirst : psnas::search::SearchOrder::kSecond;
      srch.dataset = srch_dataset;
      srch.out = srch_out;
      pl::cmd_search(srch);
    } else if (*train_cmd) {
      trn.network = pl::network_from_name(trn_net);
      trn.genotype = trn_genotype;
      trn.dataset = trn_dataset;
      trn.out = trn_out;
      pl::cmd_train(trn);
    } else if (*eval_cmd) {
      ev.light_checkpoint = ev_light;
      ev.normal_checkpoint = ev_normal;
      ev.dataset = ev_dataset;
      ev.out = ev_out;
      const auto report = pl::cmd_eval(ev);
      if (ev.out.empty()) std::cout << report.to_string();
    } else if (*infer_cmd) {
      inf.light_checkpoint = inf_light;
      inf.normal_checkpoint = inf_normal;
      inf.images = inf_images;
      inf.out = inf_out;
      pl::cmd_infer(inf);
    }
  } catch (const psnas::DivergenceError& e) {
    std::cerr << "psnas: " << e.what() << '\n';
    if (!e.last_checkpoint().empty()) std::cerr << "psnas: last good checkpoint: " << e.last_checkpoint() << '\n';
    return kExitDivergence;
  } catch (const psnas::Error& e) {
    std::cerr << "psnas: error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "psnas: error: " << e.what() << '\n';
    return kExitValidation;
  }
  return 0;
}
