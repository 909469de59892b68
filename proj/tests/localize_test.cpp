#include <gtest/gtest.h>

#include <cmath>

#include "facnet/localize.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace facnet {
namespace {

const std::vector<double> kGrid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

Matrix<double> column(std::initializer_list<double> v) {
  Matrix<double> m(v.size(), 1);
  std::size_t i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

TEST(LocalizeConfig, Validation) {
  LocalizeConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.class_reject_threshold, 0.1);
  EXPECT_EQ(c.thresholds, kGrid);
  c.thresholds = {0.5, 0.3};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.thresholds = {0.0, 0.3};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.nms_tiou = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(MinmaxNormalize, RangeAndConstant) {
  EXPECT_EQ(minmax_normalize(std::vector<double>{2, 4, 3}), (std::vector<double>{0, 1, 0.5}));
  EXPECT_EQ(minmax_normalize(std::vector<double>{7, 7}), (std::vector<double>{0.5, 0.5}));
}

TEST(FuseScores, ForegroundWeightZero) {
  const Matrix<double> s_a{{1, 5, 0}, {3, 4, 0}, {2, 3, 0}};
  const auto s_f = column({0.2, 0.2, 0.2});
  const auto g = fuse_scores(s_a, s_f, 2, 0.0);
  EXPECT_EQ(g.cols(), 2u);
  EXPECT_EQ(g, (Matrix<double>{{0, 1}, {1, 0.5}, {0.5, 0}}));
}

TEST(FuseScores, FixedPoint) {
  const auto s_f = column({-1, 2, 0.5, 4});
  Matrix<double> s_a(4, 2);
  for (std::size_t t = 0; t < 4; ++t) s_a(t, 0) = s_f(t, 0);
  const auto g = fuse_scores(s_a, s_f, 1, 0.5);
  const auto expected = minmax_normalize(s_f.values());
  for (std::size_t t = 0; t < 4; ++t) EXPECT_DOUBLE_EQ(g(t, 0), expected[t]);
}

TEST(FuseScores, HandBuiltSequence) {
  // S_f = [0, 2, 4, 1] -> [0, .5, 1, .25]; S_a(:,0) = [3, 1, 1, 5] -> [.5, 0, 0, 1]
  const auto s_f = column({0, 2, 4, 1});
  const Matrix<double> s_a{{3, 9}, {1, 9}, {1, 9}, {5, 9}};
  const auto g = fuse_scores(s_a, s_f, 1, 0.5);
  const std::vector<double> expected{0.25, 0.25, 0.5, 0.625};
  for (std::size_t t = 0; t < 4; ++t) EXPECT_DOUBLE_EQ(g(t, 0), expected[t]);
}

TEST(FuseScores, ShapeErrors) {
  EXPECT_THROW(fuse_scores(Matrix<double>(3, 2), Matrix<double>(2, 1), 1, 0.5), ContractError);
  EXPECT_THROW(fuse_scores(Matrix<double>(3, 2), Matrix<double>(3, 1), 3, 0.5), ContractError);
}

TEST(Upsample, StrideOneIsIdentity) {
  const Matrix<double> g{{0.1, 0.3}, {0.7, 0.2}};
  const auto f = upsample(g, 1, 25.0);
  EXPECT_EQ(f.values, g);
  EXPECT_DOUBLE_EQ(f.time_of(25), 1.0);
}

TEST(Upsample, TwoSnippetRamp) {
  const auto f = upsample(column({0, 1}), 4, 8.0);
  ASSERT_EQ(f.values.rows(), 8u);
  // snippet centres at frames 1.5 and 5.5; clamped outside
  const std::vector<double> expected{0, 0, 0.125, 0.375, 0.625, 0.875, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_DOUBLE_EQ(f.values(i, 0), expected[i]);
    if (i > 0) { EXPECT_GE(f.values(i, 0), f.values(i - 1, 0)); }
  }
  EXPECT_DOUBLE_EQ(f.duration(), 1.0);
}

TEST(Upsample, ConstantStaysConstant) {
  const auto f = upsample(Matrix<double>(5, 2, 0.3), 16, 25.0);
  for (double v : f.values.storage()) EXPECT_DOUBLE_EQ(v, 0.3);
  EXPECT_THROW(upsample(Matrix<double>(0, 2), 16, 25.0), InputError);
}

TEST(Propose, StepFunction) {
  std::vector<double> g(40, 0.0);
  for (std::size_t i = 10; i < 22; ++i) g[i] = 1.0;
  for (double theta : {0.05, 0.5, 0.95}) {
    const std::vector<double> grid{theta};
    const auto out = propose(g, 2, grid, 10.0, 0.3, 0.25);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].class_id, 2u);
    EXPECT_DOUBLE_EQ(out[0].t_start, 1.0);
    EXPECT_DOUBLE_EQ(out[0].t_end, 2.2);
    EXPECT_DOUBLE_EQ(out[0].confidence, 1.0 - 0.0 + 0.3);
  }
}

TEST(Propose, ThresholdAboveMaximum) {
  const std::vector<double> g{0.1, 0.4, 0.2};
  const std::vector<double> grid{0.5, 0.7};
  EXPECT_TRUE(propose(g, 0, grid, 25.0, 0.0, 0.25).empty());
}

TEST(Propose, TwoPlateausAcrossGrid) {
  std::vector<double> g(60, 0.0);
  for (std::size_t i = 10; i < 20; ++i) g[i] = 0.8;
  for (std::size_t i = 35; i < 45; ++i) g[i] = 0.4;
  const std::vector<double> grid{0.3, 0.5, 0.7};
  std::size_t at_03 = propose(g, 0, std::vector<double>{0.3}, 1.0, 0, 0.25).size();
  std::size_t at_05 = propose(g, 0, std::vector<double>{0.5}, 1.0, 0, 0.25).size();
  std::size_t at_07 = propose(g, 0, std::vector<double>{0.7}, 1.0, 0, 0.25).size();
  EXPECT_EQ(at_03, 2u);
  EXPECT_EQ(at_05, 1u);
  EXPECT_EQ(at_07, 1u);
  const auto out = propose(g, 0, grid, 1.0, 0, 0.25);
  ASSERT_EQ(out.size(), 2u);
  const auto& high = out[0].t_start < out[1].t_start ? out[0] : out[1];
  const auto& low = out[0].t_start < out[1].t_start ? out[1] : out[0];
  EXPECT_EQ(high.t_start, 10.0);
  EXPECT_EQ(low.t_start, 35.0);
  EXPECT_GT(high.confidence, low.confidence);
  EXPECT_DOUBLE_EQ(high.confidence, 0.8);
}

TEST(Propose, ContextClippedAtVideoBounds) {
  const std::vector<double> g{1, 1, 1, 1, 0.2, 0.2, 0.2, 0.2};
  const auto out = propose(g, 0, std::vector<double>{0.5}, 1.0, 0, 0.25);
  ASSERT_EQ(out.size(), 1u);
  // four frames inside, one frame of right context only
  EXPECT_DOUBLE_EQ(out[0].confidence, 1.0 - 0.2);
}

TEST(ProposeProperties, IntervalsValidAndShiftInvariant) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(1, 80));
    const auto raw = testing::random_vector(n, rng);
    const auto g = minmax_normalize(raw);
    const double fps = 25.0;
    const auto out = propose(g, 0, kGrid, fps, 0.0, 0.25);
    for (const auto& inst : out) {
      EXPECT_LT(inst.t_start, inst.t_end);
      EXPECT_GE(inst.t_start, 0.0);
      EXPECT_LE(inst.t_end, static_cast<double>(n) / fps);
    }
    std::vector<double> shifted(n);
    const double scale = std::exp(rng.uniform(-2, 2)), offset = rng.uniform(-5, 5);
    for (std::size_t i = 0; i < n; ++i) shifted[i] = scale * raw[i] + offset;
    const auto again = propose(minmax_normalize(shifted), 0, kGrid, fps, 0.0, 0.25);
    ASSERT_EQ(again.size(), out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_EQ(again[i].t_start, out[i].t_start);
      EXPECT_EQ(again[i].t_end, out[i].t_end);
      EXPECT_NEAR(again[i].confidence, out[i].confidence, 1e-9);
    }
  }
}

TEST(Nms, Examples) {
  const ActionInstance a{0, 0.7, 1, 3};
  EXPECT_EQ(nms({a}, 0.5), std::vector<ActionInstance>{a});
  const ActionInstance hi{0, 0.9, 2, 5}, lo{0, 0.5, 2, 5};
  EXPECT_EQ(nms({lo, hi}, 0.5), std::vector<ActionInstance>{hi});
  EXPECT_TRUE(nms({}, 0.5).empty());
}

TEST(Nms, MatchesBruteForceAndKeepsAntichain) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(0, 12));
    const auto instances = testing::random_instances(rng, n);
    const double thr = trial % 2 ? 0.5 : rng.uniform(0.05, 1.0);
    const auto kept = nms(instances, thr);
    EXPECT_EQ(kept, testing::brute_force_nms(instances, thr));
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (i > 0) { EXPECT_GE(kept[i - 1].confidence, kept[i].confidence); }
      for (std::size_t j = i + 1; j < kept.size(); ++j) EXPECT_LT(tiou(kept[i].segment(), kept[j].segment()), thr);
    }
  }
}

StreamScores plateau_stream(double p_f0, double p_f1) {
  // class 0 active on snippets [4, 8), foreground score follows it
  StreamScores s;
  s.s_a = Matrix<double>(12, 3);
  s.s_f = Matrix<double>(12, 1);
  for (std::size_t t = 4; t < 8; ++t) {
    s.s_a(t, 0) = 1;
    s.s_f(t, 0) = 1;
  }
  s.p_f = {p_f0, p_f1, 0.0};
  s.fps = 4.0;
  s.snippet_stride = 1;
  return s;
}

TEST(LocalizeVideo, AllClassesRejected) {
  LocalizeConfig cfg;
  cfg.class_reject_threshold = 1.1;
  EXPECT_TRUE(localize_video({plateau_stream(0.9, 0.1)}, 2, cfg).empty());
}

TEST(LocalizeVideo, CleanPlateauGivesOneInstance) {
  const auto out = localize_video({plateau_stream(0.95, 0.02)}, 2, LocalizeConfig{});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].class_id, 0u);
  EXPECT_DOUBLE_EQ(out[0].t_start, 1.0);
  EXPECT_DOUBLE_EQ(out[0].t_end, 2.0);
  EXPECT_DOUBLE_EQ(out[0].confidence, 1.0);
}

TEST(LocalizeVideo, ClassConfidenceSwitch) {
  LocalizeConfig cfg;
  cfg.include_class_conf = true;
  const auto out = localize_video({plateau_stream(0.95, 0.02)}, 2, cfg);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0].confidence, 1.95);
}

TEST(LocalizeVideo, DuplicateStreamsCollapse) {
  const auto s = plateau_stream(0.95, 0.02);
  const auto out = localize_video({s, s}, 2, LocalizeConfig{});
  EXPECT_EQ(out.size(), 1u);
  EXPECT_THROW(localize_video({}, 2, LocalizeConfig{}), ContractError);
  EXPECT_THROW(localize_video({s, s, s}, 2, LocalizeConfig{}), ContractError);
}

TEST(LocalizeVideo, OutputIsClasswiseAntichain) {
  Rng rng(3);
  LocalizeConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    StreamScores s;
    s.s_a = testing::random_matrix(20, 4, rng);
    s.s_f = testing::random_matrix(20, 1, rng);
    s.p_f = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    s.fps = 25;
    s.snippet_stride = 8;
    const auto out = localize_video({s}, 3, cfg);
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_LT(out[i].class_id, 3u);
      EXPECT_GE(s.p_f[out[i].class_id], cfg.class_reject_threshold);
      for (std::size_t j = i + 1; j < out.size(); ++j) {
        if (out[i].class_id == out[j].class_id) { EXPECT_LT(tiou(out[i].segment(), out[j].segment()), cfg.nms_tiou); }
      }
    }
  }
}

}  // namespace
}  // namespace facnet
