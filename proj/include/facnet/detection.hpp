#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <tuple>

namespace facnet {

/// Temporal segment in seconds.
struct Interval {
  double start = 0;
  double end = 0;

  double length() const { return end - start; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Intersection over union of two segments; 0 when disjoint or degenerate.
inline double tiou(const Interval& a, const Interval& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = std::max(0.0, a.length()) + std::max(0.0, b.length()) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

/// One localized action: class, confidence and segment.
struct ActionInstance {
  std::size_t class_id = 0;
  double confidence = 0;
  double t_start = 0;
  double t_end = 0;

  Interval segment() const { return {t_start, t_end}; }
  friend bool operator==(const ActionInstance&, const ActionInstance&) = default;
};

/// An ActionInstance attributed to a video.
struct Detection {
  std::string video_id;
  ActionInstance instance;
};

struct GroundTruthInstance {
  std::string video_id;
  std::size_t class_id = 0;
  double t_start = 0;
  double t_end = 0;

  Interval segment() const { return {t_start, t_end}; }
  friend bool operator==(const GroundTruthInstance&, const GroundTruthInstance&) = default;
};

}  // namespace facnet
