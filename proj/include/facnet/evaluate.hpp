#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "facnet/detection.hpp"

namespace facnet {

inline std::vector<double> make_grid(double first, double last, double step) {
  std::vector<double> grid;
  const auto n = static_cast<int>(std::lround((last - first) / step));
  for (int i = 0; i <= n; ++i) grid.push_back(std::round((first + step * i) * 1e6) / 1e6);
  return grid;
}

/// 0.1:0.1:0.7
inline std::vector<double> thumos_grid() { return make_grid(0.1, 0.7, 0.1); }
/// 0.5:0.05:0.95
inline std::vector<double> activitynet_grid() { return make_grid(0.5, 0.95, 0.05); }

namespace detail {

/// Ranking order: confidence descending, then (video id, t_s, t_e, class).
inline bool rank_before(const Detection& a, const Detection& b) {
  if (a.instance.confidence != b.instance.confidence) return a.instance.confidence > b.instance.confidence;
  if (a.video_id != b.video_id) return a.video_id < b.video_id;
  if (a.instance.t_start != b.instance.t_start) return a.instance.t_start < b.instance.t_start;
  if (a.instance.t_end != b.instance.t_end) return a.instance.t_end < b.instance.t_end;
  return a.instance.class_id < b.instance.class_id;
}

}  // namespace detail

/// Uninterpolated AP for one class. Each prediction, in rank order, claims the
/// unmatched ground truth in its video with the highest tIoU >= threshold.
/// AP = sum over true positives of precision at that rank, divided by #GT.
/// Returns 0 when there is no ground truth.
inline double average_precision(std::vector<Detection> predictions, const std::vector<GroundTruthInstance>& truths,
                                double tiou_threshold) {
  if (truths.empty()) return 0.0;
  std::stable_sort(predictions.begin(), predictions.end(), detail::rank_before);

  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t i = 0; i < truths.size(); ++i) by_video[truths[i].video_id].push_back(i);
  std::vector<bool> matched(truths.size(), false);

  double ap = 0;
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < predictions.size(); ++rank) {
    const auto& p = predictions[rank];
    auto it = by_video.find(p.video_id);
    if (it == by_video.end()) continue;
    double best = -1;
    std::size_t best_idx = 0;
    for (std::size_t gi : it->second) {
      if (matched[gi]) continue;
      const double overlap = tiou(p.instance.segment(), truths[gi].segment());
      if (overlap >= tiou_threshold && overlap > best) {
        best = overlap;
        best_idx = gi;
      }
    }
    if (best < 0) continue;
    matched[best_idx] = true;
    ++tp;
    ap += static_cast<double>(tp) / static_cast<double>(rank + 1);
  }
  return ap / static_cast<double>(truths.size());
}

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<std::vector<double>> ap;  // [threshold][class]
  std::vector<bool> class_has_gt;
  std::vector<double> map;               // per threshold
  double average = 0;

  std::string table(const std::vector<std::string>& class_names = {}) const;
  nlohmann::json to_json(const std::vector<std::string>& class_names = {}) const;
};

/// mAP(θ) averages AP over classes with at least one ground truth; the
/// average is taken over the threshold grid.
inline EvalReport map_report(const std::vector<Detection>& predictions,
                             const std::vector<GroundTruthInstance>& truths, const std::vector<double>& grid,
                             std::size_t num_classes) {
  EvalReport r;
  r.thresholds = grid;
  std::vector<std::vector<Detection>> pred_by_class(num_classes);
  std::vector<std::vector<GroundTruthInstance>> gt_by_class(num_classes);
  for (const auto& p : predictions) {
    if (p.instance.class_id < num_classes) pred_by_class[p.instance.class_id].push_back(p);
  }
  for (const auto& g : truths) {
    if (g.class_id < num_classes) gt_by_class[g.class_id].push_back(g);
  }
  r.class_has_gt.resize(num_classes);
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    r.class_has_gt[c] = !gt_by_class[c].empty();
    counted += r.class_has_gt[c] ? 1 : 0;
  }
  for (double theta : grid) {
    std::vector<double> row(num_classes, 0.0);
    double sum = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (!r.class_has_gt[c]) continue;
      row[c] = average_precision(pred_by_class[c], gt_by_class[c], theta);
      sum += row[c];
    }
    r.ap.push_back(std::move(row));
    r.map.push_back(counted ? sum / static_cast<double>(counted) : 0.0);
  }
  double total = 0;
  for (double m : r.map) total += m;
  r.average = r.map.empty() ? 0.0 : total / static_cast<double>(r.map.size());
  return r;
}

inline std::string EvalReport::table(const std::vector<std::string>&) const {
  std::ostringstream out;
  char buf[64];
  out << "mAP@tIoU";
  for (double t : thresholds) {
    std::snprintf(buf, sizeof buf, "%8.2f", t);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "   AVG (%.2f:%.2f)", thresholds.front(), thresholds.back());
  out << buf << "\n";
  out << "        ";
  for (double m : map) {
    std::snprintf(buf, sizeof buf, "%8.1f", 100.0 * m);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%18.1f", 100.0 * average);
  out << buf << "\n";
  return out.str();
}

inline nlohmann::json EvalReport::to_json(const std::vector<std::string>& class_names) const {
  nlohmann::json j;
  j["thresholds"] = thresholds;
  j["map"] = map;
  j["average_map"] = average;
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < class_has_gt.size(); ++c) {
    if (!class_has_gt[c]) continue;
    const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
    std::vector<double> col;
    for (const auto& row : ap) col.push_back(row[c]);
    per_class[name] = col;
  }
  j["ap"] = per_class;
  return j;
}

}  // namespace facnet
