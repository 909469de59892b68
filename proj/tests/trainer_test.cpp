#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "facnet/trainer.hpp"
#include "test_util.hpp"

namespace facnet {
namespace {

namespace fs = std::filesystem;
using testing::random_matrix;
using testing::tiny_config;

ModelParams<double> scalar_params(double value) {
  ModelParams<double> p;
  for (auto* m : p.tensors()) *m = Matrix<double>(1, 1, value);
  return p;
}

std::vector<Matrix<double>> scalar_grads(double g) { return std::vector<Matrix<double>>(6, Matrix<double>(1, 1, g)); }

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("facnet_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TinySet {
  std::vector<Matrix<float>> features;
  std::vector<TrainSample> samples;
};

TinySet tiny_set(std::size_t count, std::size_t classes, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  TinySet s;
  for (std::size_t i = 0; i < count; ++i) {
    s.features.push_back(random_matrix<float>(static_cast<std::size_t>(rng.integer(2, 9)), dim, rng));
  }
  for (std::size_t i = 0; i < count; ++i) s.samples.push_back({&s.features[i], testing::random_labels(classes, rng)});
  return s;
}

TEST(TrainConfig, Validation) {
  TrainConfig tc;
  EXPECT_NO_THROW(tc.validate());
  EXPECT_EQ(tc.learning_rate, 1e-4);
  EXPECT_EQ(tc.epochs, 100u);
  tc.epochs = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = {};
  tc.learning_rate = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = {};
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
}

TEST(AdamStep, ZeroGradient) {
  auto p = scalar_params(2.0);
  auto state = OptimizerState<double>::zeros_like(p);
  state.first[0][0] = 0.5;
  state.second[0][0] = 0.25;
  adam_step(p, scalar_grads(0.0), state, TrainConfig{});
  EXPECT_EQ(state.step, 1u);
  EXPECT_DOUBLE_EQ(state.first[0][0], 0.45);
  EXPECT_DOUBLE_EQ(state.second[0][0], 0.25 * 0.999);
  for (const auto* m : p.tensors()) {
    if (m != &p.conv1_w) { EXPECT_EQ((*m)[0], 2.0); }
  }
}

TEST(AdamStep, FirstStepIsSignedLearningRate) {
  auto p = scalar_params(1.0);
  auto state = OptimizerState<double>::zeros_like(p);
  TrainConfig tc;
  tc.learning_rate = 0.1;
  adam_step(p, scalar_grads(4.0), state, tc);
  // m̂ = 4, v̂ = 16: update = -0.1 * 4 / (4 + 1e-8)
  const double expected = 1.0 - 0.1 * 4.0 / (4.0 + 1e-8);
  for (const auto* m : p.tensors()) {
    EXPECT_NEAR((*m)[0], expected, 1e-15);
    EXPECT_NEAR((*m)[0] - 1.0, -0.1, 1e-8);
  }
}

TEST(AdamStep, RejectsNonFiniteGradientByName) {
  auto p = scalar_params(1.0);
  auto state = OptimizerState<double>::zeros_like(p);
  auto g = scalar_grads(1.0);
  g[4][0] = std::nan("");
  try {
    adam_step(p, g, state, TrainConfig{});
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("w_a"), std::string::npos);
  }
  EXPECT_EQ(state.step, 0u);
  EXPECT_EQ(p, scalar_params(1.0));
}

TEST(TrainEpoch, BatchSizeOneStepsPerVideo) {
  const auto c = tiny_config(3, 4, 5);
  auto set = tiny_set(7, 3, 4, 1);
  auto p = init_params<double>(c, 2);
  auto state = OptimizerState<double>::zeros_like(p);
  TrainConfig tc;
  tc.batch_size = 1;
  const auto r = train_epoch(set.samples, p, state, c, LossWeights{}, tc, 1);
  EXPECT_EQ(r.steps, 7u);
  EXPECT_EQ(state.step, 7u);
  tc.batch_size = 3;
  const auto r3 = train_epoch(set.samples, p, state, c, LossWeights{}, tc, 2);
  EXPECT_EQ(r3.steps, 3u);
  EXPECT_EQ(r3.videos, 7u);
}

TEST(TrainEpoch, SkipsEmptyVideos) {
  const auto c = tiny_config(3, 4, 5);
  auto set = tiny_set(3, 3, 4, 2);
  set.features[1] = Matrix<float>(0, 4);
  auto p = init_params<double>(c, 2);
  auto state = OptimizerState<double>::zeros_like(p);
  const auto r = train_epoch(set.samples, p, state, c, LossWeights{}, TrainConfig{}, 1);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.videos, 2u);
  EXPECT_THROW(train_epoch({}, p, state, c, LossWeights{}, TrainConfig{}, 1), InputError);
}

TEST(TrainEpoch, AccumulatedStepEqualsMeanGradientStep) {
  auto c = tiny_config(3, 4, 5);
  auto set = tiny_set(5, 3, 4, 3);
  const auto start = init_params<double>(c, 4);
  TrainConfig tc;
  tc.batch_size = 5;
  tc.learning_rate = 1e-2;

  auto p = start;
  auto state = OptimizerState<double>::zeros_like(p);
  train_epoch(set.samples, p, state, c, LossWeights{}, tc, 1);

  // with dropout disabled the per-video gradients do not depend on order
  std::vector<Matrix<double>> mean;
  for (const auto& s : set.samples) {
    const auto g = video_gradient(matrix_cast<double>(*s.features), s.labels, start, c, LossWeights{}, false, 0).grads;
    if (mean.empty()) {
      mean = g;
    } else {
      for (std::size_t i = 0; i < 6; ++i) mean[i] += g[i];
    }
  }
  for (auto& m : mean) m *= 1.0 / 5.0;
  auto q = start;
  auto qstate = OptimizerState<double>::zeros_like(q);
  adam_step(q, mean, qstate, tc);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_LT(max_abs_diff(*p.tensors()[i], *q.tensors()[i]), 1e-12) << kParamNames[i];
  }
}

TEST(TrainEpoch, ThreadCountDoesNotChangeResult) {
  auto c = tiny_config(3, 4, 6);
  c.dropout_rate = 0.5;
  auto set = tiny_set(9, 3, 4, 5);
  TrainConfig tc;
  tc.batch_size = 4;
  auto run = [&](std::size_t threads) {
    tc.threads = threads;
    auto p = init_params<double>(c, 6);
    auto state = OptimizerState<double>::zeros_like(p);
    for (std::size_t e = 1; e <= 2; ++e) train_epoch(set.samples, p, state, c, LossWeights{}, tc, e);
    return p;
  };
  EXPECT_EQ(run(1), run(3));
}

TEST(Fit, SeededRunsAreIdentical) {
  auto c = tiny_config(3, 4, 6);
  c.dropout_rate = 0.5;
  auto set = tiny_set(10, 3, 4, 7);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.seed = 42;
  tc.max_snippets = 5;
  const auto a = fit<double>(set.samples, c, tc, LossWeights{});
  const auto b = fit<double>(set.samples, c, tc, LossWeights{});
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.history.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.history[i].total, b.history[i].total);
  tc.seed = 43;
  EXPECT_FALSE(fit<double>(set.samples, c, tc, LossWeights{}).params == a.params);
}

TEST(Fit, RejectsZeroEpochs) {
  auto set = tiny_set(2, 3, 4, 8);
  TrainConfig tc;
  tc.epochs = 0;
  EXPECT_THROW(fit<double>(set.samples, tiny_config(3, 4, 5), tc, LossWeights{}), ConfigError);
}

TEST(Fit, ResumeReproducesNextEpochBitIdentically) {
  auto c = tiny_config(3, 4, 6);
  c.dropout_rate = 0.5;
  auto set = tiny_set(8, 3, 4, 9);
  const auto dir = scratch_dir("resume");
  TrainConfig tc;
  tc.batch_size = 3;
  tc.seed = 5;
  tc.epochs = 4;
  const auto straight = fit<double>(set.samples, c, tc, LossWeights{});

  FitOptions opts;
  opts.state = dir / "state.facs";
  opts.resume = true;
  tc.epochs = 2;
  fit<double>(set.samples, c, tc, LossWeights{}, opts);
  tc.epochs = 4;
  const auto resumed = fit<double>(set.samples, c, tc, LossWeights{}, opts);
  ASSERT_EQ(resumed.history.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(resumed.history[i].total, straight.history[i].total) << "epoch " << i + 1;
    EXPECT_EQ(resumed.history[i].cw, straight.history[i].cw);
  }
  EXPECT_EQ(resumed.params, straight.params);
  EXPECT_EQ(resumed.optimizer, straight.optimizer);
}

TEST(Fit, WritesHistoryAndCheckpoints) {
  const auto c = tiny_config(3, 4, 5);
  auto set = tiny_set(4, 3, 4, 10);
  const auto dir = scratch_dir("outputs");
  TrainConfig tc;
  tc.epochs = 4;
  tc.checkpoint_interval = 2;
  FitOptions opts;
  opts.checkpoint = dir / "model.facn";
  opts.history = dir / "history.csv";
  std::size_t callbacks = 0;
  opts.on_epoch = [&](const EpochReport&) { ++callbacks; };
  const auto res = fit<double>(set.samples, c, tc, LossWeights{}, opts);
  EXPECT_EQ(callbacks, 4u);
  EXPECT_TRUE(fs::exists(dir / "model.epoch2.facn"));
  EXPECT_TRUE(fs::exists(dir / "model.facn"));

  std::ifstream in(dir / "history.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,l_cw,l_ca,l_mil,total");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4u);

  const auto ck = load_checkpoint(dir / "model.facn");
  EXPECT_EQ(ck.config, c);
  EXPECT_EQ(ck.params, res.params.cast<float>());
}

TEST(Fit, IdenticalRunsWriteIdenticalCheckpoints) {
  const auto c = tiny_config(3, 4, 5);
  auto set = tiny_set(5, 3, 4, 11);
  const auto dir = scratch_dir("determinism");
  TrainConfig tc;
  tc.epochs = 2;
  tc.precision = Precision::F64;
  for (const char* name : {"a.facn", "b.facn"}) {
    FitOptions opts;
    opts.checkpoint = dir / name;
    fit<double>(set.samples, c, tc, LossWeights{}, opts);
  }
  EXPECT_EQ(file_bytes(dir / "a.facn"), file_bytes(dir / "b.facn"));
}

TEST(Fit, LossFallsOnSeparableSingleActionData) {
  SynthConfig sc;
  sc.min_instances = sc.max_instances = 1;
  sc.num_test = 0;
  sc.seed = 3;
  const auto syn = generate_synthetic(sc);
  ModelConfig mc;
  mc.num_classes = 5;
  mc.feature_dim = 64;
  mc.embed_dims = {64, 64};
  TrainConfig tc;
  tc.epochs = 30;
  tc.learning_rate = 1e-3;
  tc.seed = 1;
  const auto res = fit<float>(training_samples(syn.dataset, 0), mc, tc, LossWeights{});
  EXPECT_LT(res.history.back().total, 0.25 * res.history.front().total);
}

}  // namespace
}  // namespace facnet
