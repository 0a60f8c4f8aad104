// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Exit status is 0 when every failing criterion was named with
// --expect-fail, 1 otherwise.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "psnas/bilevel.hpp"
#include "psnas/cell.hpp"
#include "psnas/error.hpp"
#include "psnas/metrics.hpp"
#include "psnas/networks.hpp"
#include "psnas/ops.hpp"
#include "psnas/pipeline.hpp"
#include "psnas/scene.hpp"
#include "psnas/search_space.hpp"
#include "support/bilevel_toys.hpp"
#include "support/gradcheck.hpp"

namespace {

namespace fs = std::filesystem;
namespace pl = psnas::pipeline;
using psnas::testing::TapeD;
using psnas::testing::TensorD;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---- 1: gradients ----

Outcome gradient_suite() {
  constexpr int kSeeds = 20;
  const auto t0 = Clock::now();
  double worst_primitive = 0, worst_network = 0;
  std::string failures;
  auto run = [&](const std::vector<psnas::testing::GradCase>& cases, double& worst) {
    for (const auto& c : cases) {
      for (int seed = 1; seed <= kSeeds; ++seed) {
        const auto r = c.run(static_cast<std::uint64_t>(seed));
        worst = std::max(worst, r.max_rel_error);
        if (!(r.max_rel_error < c.tolerance)) failures += " " + c.name + "@" + std::to_string(seed);
      }
    }
  };
  auto primitives = psnas::testing::primitive_cases();
  const auto losses = psnas::testing::loss_cases();
  primitives.insert(primitives.end(), losses.begin(), losses.end());
  run(primitives, worst_primitive);
  run(psnas::testing::network_cases(), worst_network);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failures.empty() && secs < 120;
  o.detail = std::to_string(primitives.size()) + " primitive/loss cases max rel err " + fmt(worst_primitive) +
             " (< 1e-6), end-to-end max rel err " + fmt(worst_network) + " (< 1e-4), " + std::to_string(kSeeds) +
             " seeds, " + fmt(secs, 3) + " s";
  if (!failures.empty()) o.detail += "; failing:" + failures;
  return o;
}

// ---- 2: Woodham ----

Outcome woodham_oracle() {
  const auto t0 = Clock::now();
  psnas::scene::Rng rng(2024);
  double worst = 0;
  std::size_t used = 0, excluded = 0;
  for (int i = 0; i < 50; ++i) {
    const auto s = psnas::scene::generate_blob_scene(32, 1 + i % 4, rng);
    const auto l = psnas::scene::sample_upper_hemisphere(4 + i % 9, rng);
    const auto res = psnas::scene::woodham_solve(psnas::scene::render(s, l), l);
    // Pixels lit by fewer than three lights are underdetermined for any solver.
    std::vector<std::uint8_t> posed(s.mask);
    for (std::size_t p = 0; p < s.pixels(); ++p) {
      posed[p] = s.mask[p] && !res.shadow_limited[p];
      excluded += s.mask[p] && res.shadow_limited[p];
      used += posed[p];
    }
    if (std::count(posed.begin(), posed.end(), 1) == 0) continue;
    worst = std::max(worst, psnas::metrics::mae_normal(res.normals, s.normals, posed));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 60,
          "worst per-scene MAE_normal " + fmt(worst) + " deg over 50 scenes with 4-12 lights (" +
              std::to_string(used) + " pixels; " + std::to_string(excluded) +
              " attached-shadow pixels with < 3 lit observations excluded), " + fmt(secs, 3) + " s"};
}

// ---- 3: GBR ----

Outcome gbr_identity() {
  psnas::scene::Rng rng(77);
  std::uniform_real_distribution<double> mn(-0.5, 0.5), lam(0.5, 2.0);
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    const auto s = psnas::scene::generate_blob_scene(32, 1 + i % 4, rng);
    const auto l = psnas::scene::sample_upper_hemisphere(8, rng);
    const psnas::scene::GbrParams g{mn(rng), mn(rng), lam(rng)};
    const auto [s2, l2] = psnas::scene::apply_gbr(s, l, g);
    const auto a = psnas::scene::render(s, l), b = psnas::scene::render(s2, l2);
    for (std::size_t j = 0; j < l.size(); ++j)
      for (std::size_t p = 0; p < s.pixels(); ++p) {
        if (!s2.mask[p]) continue;
        const std::size_t k = j * s.pixels() + p;
        worst = std::max(worst, std::abs(a.images[k] - b.images[k]));
      }
  }
  return {worst < 1e-10, "max |I - I'| " + fmt(worst) + " over 50 (scene, lights, g) triples"};
}

// ---- 4: relaxation ----

Outcome relaxation_invariants() {
  std::mt19937_64 rng(4);
  double worst_sum = 0;
  bool edges_ok = true, shift_ok = true, round_trip_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const auto alpha = psnas::ArchParams<double>::random(rng, 0.01 + trial * 0.1);
    TapeD tape(false);
    const auto w = psnas::relax(tape, alpha);
    for (const TensorD* t : {&w.normal, &w.reduction})
      for (std::size_t e = 0; e < psnas::kNumEdges; ++e) {
        double s = 0;
        for (std::size_t o = 0; o < psnas::kNumOps; ++o) s += (*t)[e * psnas::kNumOps + o];
        worst_sum = std::max(worst_sum, std::abs(s - 1));
      }

    psnas::Genotype g = psnas::discretize(alpha);
    g.channels = 8;
    g.blocks = {{"features", "NRNRN"}};
    for (auto kind : {psnas::CellKind::kNormal, psnas::CellKind::kReduction})
      for (const auto& node : g.of(kind)) edges_ok = edges_ok && node.size() == 2 && node[0].source != node[1].source;
    try {
      psnas::validate_genotype(g);
    } catch (const psnas::Error&) {
      edges_ok = false;
    }

    psnas::ArchParams<double> shifted{alpha.normal.clone(), alpha.reduction.clone()};
    std::uniform_int_distribution<int> shift(-50, 50);
    for (std::size_t e = 0; e < psnas::kNumEdges; ++e) {
      const double cn = shift(rng), cr = shift(rng);
      for (std::size_t o = 0; o < psnas::kNumOps; ++o) {
        shifted.normal[e * psnas::kNumOps + o] += cn;
        shifted.reduction[e * psnas::kNumOps + o] += cr;
      }
    }
    psnas::Genotype gs = psnas::discretize(shifted);
    gs.channels = g.channels;
    gs.blocks = g.blocks;
    shift_ok = shift_ok && gs == g;

    round_trip_ok = round_trip_ok && psnas::parse_genotype(psnas::serialize_genotype(g)) == g;
  }
  const psnas::Genotype skip = psnas::all_skip_genotype(8, {{"features", "NRNRN"}});
  round_trip_ok = round_trip_ok && psnas::parse_genotype(psnas::serialize_genotype(skip)) == skip;
  return {worst_sum <= 1e-6 && edges_ok && shift_ok && round_trip_ok,
          "max |sum w - 1| " + fmt(worst_sum) + ", two distinct in-edges " + (edges_ok ? "yes" : "NO") +
              ", shift invariance " + (shift_ok ? "exact" : "BROKEN") + ", 100 random genotypes round-trip " +
              (round_trip_ok ? "yes" : "NO")};
}

// ---- 5: bi-level ----

Outcome bilevel_checks() {
  using psnas::LightBatch;
  using psnas::LightNet;
  using psnas::LightSearchModel;
  namespace search = psnas::search;

  std::mt19937_64 rng(5);
  LightNet<double> net(psnas::testing::tiny_light_config(), nullptr, rng);
  LightSearchModel<double> model(net);
  auto make_batch = [&] {
    LightBatch<double> b;
    b.images = psnas::testing::random_const({6, 1, 8, 8}, rng);
    b.groups = 2;
    b.targets = psnas::testing::random_light_targets(6, rng);
    return b;
  };
  const auto train = make_batch(), val = make_batch();

  const auto first = search::first_order_arch_gradient(model, val);
  const auto zero_xi = search::second_order_arch_gradient(model, train, val, 0.0);
  const bool xi_zero_exact = first.grads == zero_xi.grads;

  double worst_rel = 0;
  for (double xi : {1e-3, 0.05, 0.2})
    for (double w0 : {0.8, -1.3}) {
      auto toy = psnas::testing::quadratic(w0, -0.3);
      const double w_virtual = w0 - xi * 2 * (w0 + 0.3);
      const double closed = 2 * xi * 2 * w_virtual;
      const auto g = search::second_order_arch_gradient(toy, 0, 1, xi);
      worst_rel = std::max(worst_rel, std::abs(g.grads[0][0] - closed) / std::abs(closed));
    }

  // Weights and running statistics must be untouched by architecture steps.
  bool weights_identical = true;
  psnas::opt::AdamState<double> arch_state(search::SearchConfig{}.arch_adam, model.arch());
  auto state_of = [&] {
    std::vector<std::vector<double>> v;
    for (const auto& t : net.params().weight_tensors()) v.emplace_back(t.data().begin(), t.data().end());
    for (const auto& t : net.params().buffer_tensors()) v.emplace_back(t.data().begin(), t.data().end());
    return v;
  };
  const auto before = state_of();
  for (int step = 0; step < 5; ++step) {
    search::second_order_arch_step(model, train, val, 0.05, arch_state);
    weights_identical = weights_identical && state_of() == before;
    search::first_order_arch_step(model, val, arch_state);
    weights_identical = weights_identical && state_of() == before;
  }
  return {xi_zero_exact && worst_rel < 1e-3 && weights_identical,
          std::string("xi=0 equals first order ") + (xi_zero_exact ? "exactly" : "NOT exactly") +
              ", quadratic toy max rel err " + fmt(worst_rel) + ", weights and BN statistics " +
              (weights_identical ? "bit-identical" : "CHANGED") + " after 10 architecture steps"};
}

// ---- 6: metrics ----

Outcome metric_checks(bool& worked_example_matches) {
  TapeD tape(false);
  const std::vector<int> t36{7, 30}, t20{3, 19};
  const double ce36 = psnas::ad::softmax_cross_entropy<double>(tape, TensorD({2, 36}, 0.0), t36).item();
  const double ce20 = psnas::ad::softmax_cross_entropy<double>(tape, TensorD({2, 20}, 0.0), t20).item();
  const bool ce_ok = std::abs(ce36 - std::log(36.0)) < 1e-12 && std::abs(ce20 - std::log(20.0)) < 1e-12 &&
                     std::abs(ce36 - 3.5835) < 1e-4 && std::abs(ce20 - 2.9957) < 1e-4;

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> e(0.2, 2.0), c(1e-3, 1e3);
  double worst_scale = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> truth(2 + trial % 95), pred(truth.size());
    for (auto& v : truth) v = e(rng);
    for (auto& v : pred) v = e(rng);
    const double base = psnas::metrics::intensity_error(pred, truth);
    const double k = c(rng);
    for (auto& v : pred) v *= k;
    worst_scale = std::max(worst_scale, std::abs(psnas::metrics::intensity_error(pred, truth) - base));
    for (std::size_t i = 0; i < truth.size(); ++i) pred[i] = k * truth[i];
    worst_scale = std::max(worst_scale, psnas::metrics::intensity_error(pred, truth));
  }

  const double worked = psnas::metrics::intensity_error(std::vector<double>{1, 1}, std::vector<double>{1, 2});
  // Independent evaluation of the least-squares scale and mean relative error.
  const double s = (1 * 1 + 1 * 2) / 2.0;
  const double oracle = (std::abs(s - 1) / 1 + std::abs(s - 2) / 2) / 2;
  worked_example_matches = std::abs(worked - 0.5) < 1e-12;
  const bool formula_ok = std::abs(worked - oracle) < 1e-15;
  Outcome o;
  o.pass = ce_ok && worst_scale < 1e-12 && formula_ok && worked_example_matches;
  o.detail = "CE uniform " + fmt(ce36, 6) + " / " + fmt(ce20, 6) + ", E_err scale drift " + fmt(worst_scale) +
             ", worked example E_err((1,1),(1,2)) = " + fmt(worked, 6) + " (closed form s = 3/2 gives " +
             fmt(oracle, 6) + "; the stated 0.5 is not reproduced)";
  if (worked_example_matches) o.detail = o.detail.substr(0, o.detail.find(" (closed form"));
  return o;
}

// ---- 7-9: desk-scale pipeline ----

struct PipelineRun {
  fs::path root;
  psnas::metrics::EvalReport k96, k8, true_lights;
  double seconds = 0;
};

PipelineRun run_pipeline(const fs::path& root, std::uint64_t seed, bool ablations) {
  PipelineRun r;
  r.root = root;
  const auto t0 = Clock::now();

  pl::GenDataConfig gen;
  gen.out = root / "data";
  gen.seed = seed;
  gen.force = true;
  pl::cmd_gen_data(gen);

  for (auto net : {pl::NetworkKind::kLight, pl::NetworkKind::kNormal}) {
    const std::string name = pl::network_name(net);
    pl::SearchRunConfig s;
    s.network = net;
    s.dataset = gen.out;
    s.out = root / ("search_" + name);
    s.seed = seed;
    s.force = true;
    pl::cmd_search(s);

    pl::TrainRunConfig t;
    t.network = net;
    t.genotype = s.out / "genotype.txt";
    t.dataset = gen.out;
    t.out = root / ("train_" + name);
    t.seed = seed;
    t.force = true;
    pl::cmd_train(t);
  }

  pl::EvalRunConfig ev;
  ev.light_checkpoint = root / "train_light" / "model.ckpt";
  ev.normal_checkpoint = root / "train_normal" / "model.ckpt";
  ev.dataset = gen.out;
  r.k96 = pl::cmd_eval(ev);
  r.seconds = seconds_since(t0);

  if (ablations) {
    ev.num_images = 8;
    r.k8 = pl::cmd_eval(ev);
    ev.num_images = 0;
    ev.true_lights = true;
    r.true_lights = pl::cmd_eval(ev);
  }
  return r;
}

// Mean angle between independent uniform upper-hemisphere directions.
double random_direction_baseline() {
  psnas::scene::Rng rng(99);
  constexpr std::size_t kPairs = 1'000'000;
  const auto a = psnas::scene::sample_upper_hemisphere(kPairs, rng);
  const auto b = psnas::scene::sample_upper_hemisphere(kPairs, rng);
  return psnas::metrics::mae_light(a.directions, b.directions);
}

Outcome desk_scale(const PipelineRun& run) {
  const double baseline = random_direction_baseline();

  auto light = pl::load_light_model(run.root / "train_light" / "model.ckpt");
  auto normal = pl::load_normal_model(run.root / "train_normal" / "model.ckpt");
  pl::NormalModel untrained;
  untrained.config = normal.config;
  {
    std::mt19937_64 rng(12345);
    const psnas::Genotype g = *normal.net->genotype();
    untrained.net = std::make_unique<psnas::NormalNet<float>>(untrained.config, &g, rng);
  }

  const auto test = pl::load_split(run.root / "data", "test");
  double untrained_mae = 0, worst_norm_dev = 0;
  for (const auto& s : test) {
    untrained_mae += pl::score_scene(s, pl::infer_scene(light, untrained, s.obs)).mae_normal;
    const auto est = pl::infer_scene(light, normal, s.obs);
    const std::size_t hw = s.obs.pixels();
    for (std::size_t p = 0; p < hw; ++p) {
      if (!s.obs.mask[p]) continue;
      const double n = std::sqrt(est.normals[p] * est.normals[p] + est.normals[hw + p] * est.normals[hw + p] +
                                 est.normals[2 * hw + p] * est.normals[2 * hw + p]);
      worst_norm_dev = std::max(worst_norm_dev, std::abs(n - 1));
    }
  }
  untrained_mae /= static_cast<double>(test.size());

  const auto& r = run.k96;
  const bool pass = run.seconds < 1200 && r.mae_light < baseline && r.mae_normal < untrained_mae &&
                    r.mae_normal < 25.0 && worst_norm_dev < 1e-4;
  return {pass, "pipeline " + fmt(run.seconds / 60, 3) + " min (< 20), MAE_light " + fmt(r.mae_light) +
                    " deg vs random baseline " + fmt(baseline) + " deg, MAE_normal " + fmt(r.mae_normal) +
                    " deg vs untrained " + fmt(untrained_mae) + " deg and 25 deg, max | |n| - 1 | " +
                    fmt(worst_norm_dev) + " over " + std::to_string(test.size()) + " test scenes"};
}

Outcome ablation(const PipelineRun& run) {
  const bool pass = run.k96.objects.size() >= 20 && run.k96.mae_normal <= run.k8.mae_normal;
  return {pass, "MAE_normal with 96 images " + fmt(run.k96.mae_normal) + " deg vs 8 images " +
                    fmt(run.k8.mae_normal) + " deg over " + std::to_string(run.k96.objects.size()) +
                    " test scenes"};
}

Outcome determinism(const PipelineRun& first, std::uint64_t seed) {
  const PipelineRun second = run_pipeline(first.root.parent_path() / (first.root.filename().string() + "_repeat"),
                                          seed, false);
  bool same = true;
  std::string diffs;
  for (const char* f : {"search_light/genotype.txt", "search_normal/genotype.txt", "train_light/genotype.txt",
                        "train_normal/genotype.txt"}) {
    if (slurp(first.root / f) != slurp(second.root / f)) {
      same = false;
      diffs += std::string(" ") + f;
    }
  }
  if (first.k96.to_string() != second.k96.to_string()) {
    same = false;
    diffs += " eval report";
  }
  return {same, same ? "genotype files byte-identical and eval report identical across two seeded runs"
                     : "differences in:" + diffs};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::uint64_t seed = 1;
  std::string work_dir;
  std::vector<int> expect_fail;
  std::vector<int> only;
  bool keep = false;
  app.add_option("--seed", seed, "Root seed of the desk-scale pipeline")->capture_default_str();
  app.add_option("--work-dir", work_dir, "Directory for pipeline artifacts (default: a fresh temp dir)");
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail; they do not affect the exit status")->delimiter(',');
  app.add_option("--only", only, "Run just these criteria")->delimiter(',');
  app.add_flag("--keep", keep, "Keep pipeline artifacts");
  CLI11_PARSE(app, argc, argv);

  fs::path root = work_dir.empty()
                      ? fs::temp_directory_path() / ("psnas_acceptance_" + std::to_string(::getpid()))
                      : fs::path(work_dir);
  fs::create_directories(root);

  auto wanted = [&](int c) { return only.empty() || std::count(only.begin(), only.end(), c) > 0; };
  std::set<int> failed;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) failed.insert(id);
    std::printf("criterion %d %-22s %s  %s\n", id, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  };

  bool worked_example_matches = false;
  report(1, "gradient-suite", gradient_suite);
  report(2, "woodham-oracle", woodham_oracle);
  report(3, "gbr-identity", gbr_identity);
  report(4, "relaxation", relaxation_invariants);
  report(5, "bilevel", bilevel_checks);
  report(6, "metrics", [&] { return metric_checks(worked_example_matches); });

  if (wanted(7) || wanted(8) || wanted(9)) {
    PipelineRun run;
    bool ran = false;
    std::string error;
    try {
      run = run_pipeline(root / "run", seed, true);
      ran = true;
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto guarded = [&](std::function<Outcome()> fn) -> std::function<Outcome()> {
      return [&, fn] { return ran ? fn() : Outcome{false, "pipeline failed: " + error}; };
    };
    report(7, "desk-scale-pipeline", guarded([&] { return desk_scale(run); }));
    report(8, "image-count-ablation", guarded([&] { return ablation(run); }));
    if (ran) {
      std::printf("info        true-lights            MAE_normal with ground-truth lights %s deg vs two-stage %s deg\n",
                  fmt(run.true_lights.mae_normal).c_str(), fmt(run.k96.mae_normal).c_str());
    }
    report(9, "determinism", guarded([&] { return determinism(run, seed); }));
  }
  if (!keep && work_dir.empty()) fs::remove_all(root);

  int unexpected = 0;
  for (int id : failed) {
    if (std::count(expect_fail.begin(), expect_fail.end(), id) == 0) ++unexpected;
  }
  std::printf("summary: %zu failing criteria, %d not listed in --expect-fail\n", failed.size(), unexpected);
  return unexpected == 0 ? 0 : 1;
}
