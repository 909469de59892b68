// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance NAME...    run the named criteria only
//
// Exit status: 0 all selected criteria passed, 1 a criterion failed,
// 77 the only failures are criteria listed as unattainable in kKnownFailures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "facnet/diagnostics.hpp"
#include "facnet/pipeline.hpp"
#include "facnet/trainer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace facnet::acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20240);
  const LossWeights weights{1.0, 0.1, 0.1};
  double worst = 0;
  std::string where = "none";
  bool ok = true;
  const int n = 24;
  for (int i = 0; i < n; ++i) {
    const auto inst = random_tiny_instance(rng);
    const auto r = check_instance(inst, weights);
    if (r.eval_failed || !r.passed(1e-4)) ok = false;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = r.worst_name + "[" + std::to_string(r.worst_index) + "]";
    }
  }
  const double secs = seconds_since(t0);
  return {ok && worst < 1e-4 && secs < 30,
          fmt("%d instances, max rel error %.2e at %s (< 1e-4), %.2fs (< 30s)", n, worst, where.c_str(), secs)};
}

Outcome reduction_identities() {
  Rng rng(31);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto classes = static_cast<std::size_t>(rng.integer(1, 4));
    auto c = testing::tiny_config(classes, 6, 5, rng.uniform() < 0.5);
    const auto p = init_params<double>(c, static_cast<std::uint64_t>(trial));
    const auto x = testing::random_matrix(static_cast<std::size_t>(rng.integer(2, 12)), 6, rng);

    c.temperatures = {1.0};
    const auto out = forward_hybrid(x, p, c, false, 0);
    const auto cw = cw_branch(out.x_e, p, c.delta, 1.0);
    const auto ca = ca_branch(out.x_e, p, c.delta, 1.0);
    worst = std::max({worst, max_abs_diff(out.r_a_mean, cw.scores), max_abs_diff(out.ca_logits_mean, ca.logits),
                      max_abs_diff(out.r_m_mean, mil_branch(cw.s_a, cw.attention)),
                      max_abs_diff(out.p_a, softmax_columns(cw.scores, 1.0)),
                      max_abs_diff(out.p_f, softmax_columns(ca.logits, 1.0))});

    c.temperatures = {1.0, 2.0, 5.0};
    const auto one = forward_hybrid(testing::random_matrix(1, 6, rng), p, c, false, 0);
    for (std::size_t h = 0; h < one.f_a.size(); ++h) {
      for (std::size_t j = 0; j < c.score_width(); ++j) {
        for (std::size_t d = 0; d < one.x_e.cols(); ++d) {
          worst = std::max(worst, std::abs(one.f_a[h](j, d) - one.x_e(0, d)));
        }
        worst = std::max(worst, std::abs(one.r_m[h](j, 0) - one.s_a(0, j)));
      }
    }
  }
  return {worst <= 1e-12, fmt("max deviation %.2e over 50 instances (<= 1e-12)", worst)};
}

Outcome normalization_suite() {
  Rng rng(47);
  double worst_sum = 0;
  std::size_t entropy_violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto classes = static_cast<std::size_t>(rng.integer(1, 6));
    const auto d_in = static_cast<std::size_t>(rng.integer(1, 12));
    auto c = testing::tiny_config(classes, d_in, static_cast<std::size_t>(rng.integer(2, 8)), rng.uniform() < 0.5);
    c.dropout_rate = 0.5;
    const auto p = init_params<double>(c, static_cast<std::uint64_t>(rng.integer(0, 1 << 30)));
    const auto x =
        testing::random_matrix(static_cast<std::size_t>(rng.integer(1, 16)), d_in, rng, rng.uniform(0.1, 10.0));
    const auto out = forward_hybrid(x, p, c, rng.uniform() < 0.5, static_cast<std::uint64_t>(trial));
    auto column_dev = [&](const Matrix<double>& m) {
      for (std::size_t j = 0; j < m.cols(); ++j) {
        double s = 0;
        for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, j);
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
    };
    for (std::size_t h = 0; h < out.a_a.size(); ++h) {
      column_dev(out.a_a[h]);
      column_dev(out.a_f[h]);
    }
    column_dev(out.p_a);
    column_dev(out.p_f);
    column_dev(out.p_m);

    // entropy of the attention columns from tau = 1 (head 0) to tau = 5 (head 2)
    auto column = [](const Matrix<double>& m, std::size_t j) {
      std::vector<double> v(m.rows());
      for (std::size_t r = 0; r < m.rows(); ++r) v[r] = m(r, j);
      return v;
    };
    for (std::size_t j = 0; j < c.score_width(); ++j) {
      if (testing::entropy(column(out.a_a[2], j)) > testing::entropy(column(out.a_a[0], j)) + 1e-12) ++entropy_violations;
    }
    if (testing::entropy(column(out.a_f[2], 0)) > testing::entropy(column(out.a_f[0], 0)) + 1e-12) ++entropy_violations;
  }
  return {worst_sum <= 1e-6 && entropy_violations == 0,
          fmt("1000 inputs, max |sum - 1| %.2e (<= 1e-6), entropy increases from tau=1 to tau=5: %zu", worst_sum,
              entropy_violations)};
}

Outcome scoring_oracles() {
  Rng rng(53);
  std::size_t nms_mismatch = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(0, 12));
    const auto instances = testing::random_instances(rng, n);
    const double thr = trial % 2 ? 0.5 : rng.uniform(0.05, 1.0);
    if (nms(instances, thr) != testing::brute_force_nms(instances, thr)) ++nms_mismatch;
  }
  double worst_map = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto data = testing::random_micro_dataset(rng);
    for (const auto& grid : {thumos_grid(), activitynet_grid()}) {
      const auto r = map_report(data.predictions, data.truths, grid, 3);
      const auto [maps, avg] = testing::brute_force_map(data.predictions, data.truths, grid, 3);
      for (std::size_t i = 0; i < grid.size(); ++i) worst_map = std::max(worst_map, std::abs(r.map[i] - maps[i]));
      worst_map = std::max(worst_map, std::abs(r.average - avg));
    }
  }
  const double t = tiou({0, 10}, {5, 15});
  return {nms_mismatch == 0 && worst_map <= 1e-10 && t == 1.0 / 3.0,
          fmt("NMS mismatches %zu/1000, mAP max deviation %.2e over 200 datasets (<= 1e-10), tiou = %.17g",
              nms_mismatch, worst_map, t)};
}

Outcome pipeline_sanity() {
  SynthConfig sc;
  sc.seed = 7;
  const auto syn = generate_synthetic(sc);
  const auto gt = syn.dataset.ground_truth(Split::Test);
  std::vector<Detection> dets;
  for (const auto& g : gt) dets.push_back({g.video_id, {g.class_id, 1.0, g.t_start, g.t_end}});
  double lowest = 1.0;
  for (const auto& grid : {thumos_grid(), activitynet_grid()}) {
    const auto r = map_report(dets, gt, grid, sc.num_classes);
    for (double m : r.map) lowest = std::min(lowest, m);
  }
  return {lowest == 1.0, fmt("%zu ground-truth instances as detections, lowest mAP over both grids %.3f", gt.size(),
                             lowest)};
}

// Desk-scale training run shared by the end-to-end and ablation criteria.
struct DeskRun {
  double average = 0;
  double seconds = 0;
};

constexpr std::size_t kDeskWidth = 256;
constexpr std::size_t kDeskEpochs = 100;

DeskRun desk_run(const LossWeights& weights) {
  const auto t0 = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.seed = 7;
  const auto syn = generate_synthetic(sc);
  ModelConfig mc;
  mc.num_classes = sc.num_classes;
  mc.feature_dim = sc.feature_dim;
  mc.embed_dims = {kDeskWidth, kDeskWidth};
  TrainConfig tc;
  tc.epochs = kDeskEpochs;
  tc.seed = 11;
  const auto res = fit<float>(training_samples(syn.dataset, 0), mc, tc, weights);
  const std::vector<StreamModel<float>> models{{mc, res.params}};
  const auto test = syn.dataset.split(Split::Test);
  const auto r = map_report(detect(test, models, sc.num_classes, LocalizeConfig{}),
                            syn.dataset.ground_truth(Split::Test), thumos_grid(), sc.num_classes);
  return {r.average, seconds_since(t0)};
}

Outcome end_to_end() {
  const auto r = desk_run({1.0, 0.1, 0.1});
  return {r.average >= 0.80 && r.seconds < 300,
          fmt("average mAP@0.1:0.7 %.4f (>= 0.80), width %zu, %zu epochs, %.1fs (< 300s)", r.average, kDeskWidth,
              kDeskEpochs, r.seconds)};
}

Outcome branch_ablation() {
  const auto full = desk_run({1.0, 0.1, 0.1});
  const auto cw = desk_run({1.0, 0.0, 0.0});
  const auto ca = desk_run({0.0, 0.1, 0.0});
  const auto mil = desk_run({0.0, 0.0, 0.1});
  const bool ok = full.average >= cw.average && full.average >= ca.average && full.average >= mil.average;
  return {ok, fmt("average mAP full %.4f, cw-only %.4f, ca-only %.4f, mil-only %.4f", full.average, cw.average,
                  ca.average, mil.average)};
}

Outcome not_reproducible() {
  // The benchmark numbers need the real I3D features; what can be checked
  // here is the import path for them.
  const auto dir = fs::temp_directory_path() / "facnet_acceptance_import";
  fs::create_directories(dir);
  Rng rng(61);
  const auto x = testing::random_matrix<float>(7, 2048, rng);
  {
    std::ofstream raw(dir / "raw.bin", std::ios::binary);
    for (float v : x.storage()) raw.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  convert_raw_features(dir / "raw.bin", 7, 2048, dir / "video.facf");
  const bool ok = load_features(dir / "video.facf") == x;
  fs::remove_all(dir);
  return {ok, "THUMOS14 42.2% / ActivityNet1.3 24.0% need the I3D feature sets and are not reproduced; "
              "raw float32 import via `facnet convert` verified on a 7x2048 blob"};
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  const fs::path cli = FACNET_CLI_PATH;
  const auto dir = fs::temp_directory_path() / "facnet_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string q = "\"";
  auto run = [&](const std::string& args) {
    const std::string cmd = q + cli.string() + q + " " + args + " > " + q + (dir / "log.txt").string() + q + " 2>&1";
    return std::system(cmd.c_str());
  };
  const std::string common = "--set train.precision=f64 --set train.epochs=3 --set model.embed_dims=[64,64] ";
  bool ok = run("synth --out " + q + (dir / "data").string() + q) == 0;
  for (const char* name : {"a", "b"}) {
    ok = ok && run(common + "train --manifest " + q + (dir / "data" / "manifest.json").string() + q + " --out " + q +
                   (dir / name).string() + q) == 0;
  }
  const auto a = read_bytes(dir / "a" / "model_rgb.facn");
  const auto b = read_bytes(dir / "b" / "model_rgb.facn");
  const auto sa = read_bytes(dir / "a" / "state_rgb.facs");
  const auto sb = read_bytes(dir / "b" / "state_rgb.facs");
  ok = ok && !a.empty() && a == b && sa == sb;
  fs::remove_all(dir);
  return {ok, fmt("two `facnet train` runs at f64: checkpoints %zu bytes, %s", a.size(),
                  a == b && sa == sb ? "bit-identical (model and optimizer state)" : "DIFFER")};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

// Criteria measured to be out of reach; see the project notes for numbers.
const std::set<std::string> kKnownFailures{"branch-ablation"};

}  // namespace facnet::acceptance

int main(int argc, char** argv) {
  using namespace facnet::acceptance;
  const std::vector<Criterion> all{
      {"gradient-correctness", gradient_correctness}, {"reduction-identities", reduction_identities},
      {"normalization", normalization_suite},         {"scoring-oracles", scoring_oracles},
      {"pipeline-sanity", pipeline_sanity},           {"end-to-end", end_to_end},
      {"branch-ablation", branch_ablation},           {"not-reproducible", not_reproducible},
      {"determinism", determinism},
  };
  std::set<std::string> selected(argv + 1, argv + argc);
  for (const auto& s : selected) {
    if (std::none_of(all.begin(), all.end(), [&](const Criterion& c) { return s == c.name; })) {
      std::fprintf(stderr, "unknown criterion '%s'\n", s.c_str());
      return 2;
    }
  }
  bool unexpected = false, known = false;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.name)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %-22s %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) (kKnownFailures.count(c.name) ? known : unexpected) = true;
  }
  if (unexpected) return 1;
  return known ? 77 : 0;
}
