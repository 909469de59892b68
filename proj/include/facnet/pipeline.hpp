#pragma once

// Glue between trained models, localization and evaluation.

#include <vector>

#include "facnet/data.hpp"
#include "facnet/evaluate.hpp"
#include "facnet/localize.hpp"

namespace facnet {

/// One trained model per stream (dual-stream) or a single model.
template <typename T>
struct StreamModel {
  ModelConfig config;
  ModelParams<T> params;
};

template <typename T>
Matrix<T> to_precision(const Matrix<float>& x) {
  if constexpr (std::is_same_v<T, float>) {
    return x;
  } else {
    return matrix_cast<T>(x);
  }
}

/// Evaluation-mode forward pass of every stream of one video.
template <typename T>
std::vector<StreamScores> score_video(const Video& v, const std::vector<StreamModel<T>>& models) {
  if (models.size() != v.streams.size()) throw ContractError("score_video: model count does not match stream count");
  std::vector<StreamScores> out;
  for (std::size_t s = 0; s < models.size(); ++s) {
    const auto outputs = forward_hybrid(to_precision<T>(v.streams[s]), models[s].params, models[s].config, false, 0);
    out.push_back(stream_scores(outputs, v.fps, v.snippet_stride));
  }
  return out;
}

/// Single-stream view of a dual-stream dataset: per-snippet features of all
/// streams joined along the feature axis (e.g. 1024 + 1024 -> 2048).
inline Dataset concatenate_streams(const Dataset& d) {
  if (d.stream_names.size() < 2) return d;
  Dataset out;
  out.classes = d.classes;
  std::string name;
  for (const auto& s : d.stream_names) name += (name.empty() ? "" : "+") + s;
  out.stream_names = {name};
  for (const auto& v : d.videos) {
    Video joined = v;
    std::size_t width = 0;
    for (const auto& x : v.streams) width += x.cols();
    Matrix<float> x(v.num_snippets(), width);
    std::size_t offset = 0;
    for (const auto& part : v.streams) {
      if (part.rows() != x.rows()) throw InputError("concatenate_streams: streams of " + v.id + " differ in length");
      for (std::size_t t = 0; t < part.rows(); ++t) {
        for (std::size_t k = 0; k < part.cols(); ++k) x(t, offset + k) = part(t, k);
      }
      offset += part.cols();
    }
    joined.streams = {std::move(x)};
    out.videos.push_back(std::move(joined));
  }
  return out;
}

template <typename T>
std::vector<Detection> detect(const std::vector<const Video*>& videos, const std::vector<StreamModel<T>>& models,
                              std::size_t num_classes, const LocalizeConfig& cfg) {
  std::vector<Detection> out;
  for (const auto* v : videos) {
    if (v->num_snippets() == 0) continue;
    for (const auto& inst : localize_video(score_video(*v, models), num_classes, cfg)) out.push_back({v->id, inst});
  }
  return out;
}

}  // namespace facnet
