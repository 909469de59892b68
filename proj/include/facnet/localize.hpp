#pragma once

// Scores → action instances: class rejection, score fusion, upsampling to
// frame rate, multi-threshold proposals with outer-inner-contrast
// confidence, and class-wise NMS across streams.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "facnet/detection.hpp"
#include "facnet/model.hpp"

namespace facnet {

struct LocalizeConfig {
  double class_reject_threshold = 0.1;
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double nms_tiou = 0.5;
  double fusion_weight = 0.5;  // weight of the foreground score in the fused sequence
  double oic_context_ratio = 0.25;
  bool include_class_conf = false;  // add P_f(c) to the proposal confidence

  void validate() const {
    if (thresholds.empty()) throw ConfigError("localize.thresholds must be non-empty");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (!(thresholds[i] > 0 && thresholds[i] < 1)) throw ConfigError("localize.thresholds must lie in (0, 1)");
      if (i > 0 && !(thresholds[i] > thresholds[i - 1])) throw ConfigError("localize.thresholds must be increasing");
    }
    if (!(nms_tiou > 0 && nms_tiou <= 1)) throw ConfigError("localize.nms_tiou must be in (0, 1]");
    if (!(fusion_weight >= 0 && fusion_weight <= 1)) throw ConfigError("localize.fusion_weight must be in [0, 1]");
    if (!(oic_context_ratio >= 0)) throw ConfigError("localize.oic_context_ratio must be >= 0");
    if (!(class_reject_threshold >= 0)) throw ConfigError("localize.class_reject_threshold must be >= 0");
  }
};

/// Maps a sequence onto [0, 1]; a constant sequence maps to 0.5 everywhere.
inline std::vector<double> minmax_normalize(std::span<const double> v) {
  std::vector<double> out(v.size(), 0.5);
  if (v.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
  return out;
}

/// G(t,c) = w·minmax(S_f)(t) + (1-w)·minmax(S_a(·,c))(t) for the C action
/// columns of S_a; a background column, if present, is ignored.
inline Matrix<double> fuse_scores(const Matrix<double>& s_a, const Matrix<double>& s_f, std::size_t num_classes,
                                  double fusion_weight) {
  if (s_f.rows() != s_a.rows() || s_f.cols() != 1) {
    throw ContractError("fuse_scores: S_f " + s_f.shape_string() + " vs S_a " + s_a.shape_string());
  }
  if (s_a.cols() < num_classes) throw ContractError("fuse_scores: S_a has fewer columns than classes");
  const auto fg = minmax_normalize(s_f.values());
  Matrix<double> g(s_a.rows(), num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto col = minmax_normalize(s_a.column_values(c));
    for (std::size_t t = 0; t < s_a.rows(); ++t) g(t, c) = fusion_weight * fg[t] + (1.0 - fusion_weight) * col[t];
  }
  return g;
}

struct FrameScores {
  Matrix<double> values;  // frames × C
  double fps = 25.0;

  double time_of(std::size_t frame) const { return static_cast<double>(frame) / fps; }
  double duration() const { return static_cast<double>(values.rows()) / fps; }
};

/// Linear interpolation between snippet centres; frame f sits at snippet
/// coordinate (f + 0.5)/stride - 0.5, clamped to the first/last snippet.
inline FrameScores upsample(const Matrix<double>& g, std::size_t stride, double fps) {
  if (g.rows() == 0) throw InputError("upsample: empty score sequence");
  if (stride < 1 || !(fps > 0)) throw ContractError("upsample: stride must be >= 1 and fps > 0");
  FrameScores out{Matrix<double>(g.rows() * stride, g.cols()), fps};
  if (stride == 1) {
    out.values = g;
    return out;
  }
  const double last = static_cast<double>(g.rows() - 1);
  for (std::size_t f = 0; f < out.values.rows(); ++f) {
    const double u = std::clamp((static_cast<double>(f) + 0.5) / static_cast<double>(stride) - 0.5, 0.0, last);
    const auto lo = static_cast<std::size_t>(std::floor(u));
    const std::size_t hi = std::min(lo + 1, g.rows() - 1);
    const double frac = u - static_cast<double>(lo);
    for (std::size_t c = 0; c < g.cols(); ++c) out.values(f, c) = (1.0 - frac) * g(lo, c) + frac * g(hi, c);
  }
  return out;
}

namespace detail {

inline double mean_range(std::span<const double> v, std::size_t begin, std::size_t end) {
  if (end <= begin) return 0.0;
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return s / static_cast<double>(end - begin);
}

}  // namespace detail

/// Outer-inner contrast of frames [begin, end) against flanking context.
inline double oic_score(std::span<const double> g, std::size_t begin, std::size_t end, double context_ratio) {
  const double inner = detail::mean_range(g, begin, end);
  const auto ctx = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(context_ratio * static_cast<double>(end - begin))));
  const std::size_t left = begin >= ctx ? begin - ctx : 0;
  const std::size_t right = std::min(g.size(), end + ctx);
  const std::size_t outer_count = (begin - left) + (right - end);
  if (context_ratio <= 0 || outer_count == 0) return inner;
  double outer = 0;
  for (std::size_t i = left; i < begin; ++i) outer += g[i];
  for (std::size_t i = end; i < right; ++i) outer += g[i];
  return inner - outer / static_cast<double>(outer_count);
}

/// Every maximal run with g > θ, for each θ, becomes a candidate; candidates
/// with identical frame ranges are merged keeping the best confidence.
inline std::vector<ActionInstance> propose(std::span<const double> g, std::size_t class_id,
                                           std::span<const double> thresholds, double fps, double class_conf,
                                           double context_ratio) {
  std::map<std::pair<std::size_t, std::size_t>, double> best;
  for (double theta : thresholds) {
    std::size_t f = 0;
    while (f < g.size()) {
      if (!(g[f] > theta)) {
        ++f;
        continue;
      }
      const std::size_t begin = f;
      while (f < g.size() && g[f] > theta) ++f;
      const double q = oic_score(g, begin, f, context_ratio) + class_conf;
      auto [it, inserted] = best.try_emplace({begin, f}, q);
      if (!inserted) it->second = std::max(it->second, q);
    }
  }
  std::vector<ActionInstance> out;
  out.reserve(best.size());
  for (const auto& [range, q] : best) {
    out.push_back({class_id, q, static_cast<double>(range.first) / fps, static_cast<double>(range.second) / fps});
  }
  return out;
}

namespace detail {

inline bool higher_confidence(const ActionInstance& a, const ActionInstance& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.t_start != b.t_start) return a.t_start < b.t_start;
  return a.t_end < b.t_end;
}

}  // namespace detail

/// Greedy NMS for instances of one class: keep the best, drop everything with
/// tIoU >= threshold against it, repeat. Result is sorted by confidence.
inline std::vector<ActionInstance> nms(std::vector<ActionInstance> instances, double tiou_threshold) {
  std::sort(instances.begin(), instances.end(), detail::higher_confidence);
  std::vector<ActionInstance> kept;
  std::vector<bool> dropped(instances.size(), false);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (dropped[i]) continue;
    kept.push_back(instances[i]);
    for (std::size_t j = i + 1; j < instances.size(); ++j) {
      if (!dropped[j] && tiou(instances[i].segment(), instances[j].segment()) >= tiou_threshold) dropped[j] = true;
    }
  }
  return kept;
}

/// Per-stream inputs for localization.
struct StreamScores {
  Matrix<double> s_a;           // T × K
  Matrix<double> s_f;           // T × 1
  std::vector<double> p_f;      // K
  double fps = 25.0;
  std::size_t snippet_stride = 16;
};

template <typename T>
StreamScores stream_scores(const BranchOutputs<T>& out, double fps, std::size_t stride) {
  StreamScores s;
  s.s_a = matrix_cast<double>(out.s_a);
  s.s_f = matrix_cast<double>(out.s_f);
  for (T v : out.p_f.storage()) s.p_f.push_back(static_cast<double>(v));
  s.fps = fps;
  s.snippet_stride = stride;
  return s;
}

inline std::vector<ActionInstance> localize_video(const std::vector<StreamScores>& streams, std::size_t num_classes,
                                                  const LocalizeConfig& cfg) {
  if (streams.empty() || streams.size() > 2) throw ContractError("localize_video: expected 1 or 2 streams");
  cfg.validate();
  std::vector<std::vector<ActionInstance>> per_class(num_classes);
  for (const auto& s : streams) {
    if (s.p_f.size() < num_classes) throw ContractError("localize_video: P_f shorter than class count");
    std::vector<std::size_t> kept_classes;
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (!(s.p_f[c] < cfg.class_reject_threshold)) kept_classes.push_back(c);
    }
    if (kept_classes.empty()) continue;
    const auto fused = fuse_scores(s.s_a, s.s_f, num_classes, cfg.fusion_weight);
    const auto frames = upsample(fused, s.snippet_stride, s.fps);
    for (std::size_t c : kept_classes) {
      const auto g = frames.values.column_values(c);
      auto props = propose(g, c, cfg.thresholds, s.fps, cfg.include_class_conf ? s.p_f[c] : 0.0, cfg.oic_context_ratio);
      per_class[c].insert(per_class[c].end(), props.begin(), props.end());
    }
  }
  std::vector<ActionInstance> out;
  for (auto& list : per_class) {
    auto kept = nms(std::move(list), cfg.nms_tiou);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

}  // namespace facnet
