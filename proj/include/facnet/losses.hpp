#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "facnet/model.hpp"

namespace facnet {

/// Video-level multi-hot label over the C action classes.
class LabelVector {
 public:
  LabelVector() = default;
  explicit LabelVector(std::vector<std::uint8_t> y) : y_(std::move(y)) {
    for (auto v : y_) {
      if (v > 1) throw InputError("LabelVector: entries must be 0 or 1");
    }
  }
  LabelVector(std::initializer_list<int> y) {
    for (int v : y) {
      if (v != 0 && v != 1) throw InputError("LabelVector: entries must be 0 or 1");
      y_.push_back(static_cast<std::uint8_t>(v));
    }
  }

  std::size_t size() const noexcept { return y_.size(); }
  std::uint8_t operator[](std::size_t i) const { return y_.at(i); }
  std::size_t positives() const { return static_cast<std::size_t>(std::count(y_.begin(), y_.end(), 1)); }
  const std::vector<std::uint8_t>& values() const noexcept { return y_; }

  friend bool operator==(const LabelVector&, const LabelVector&) = default;

 private:
  std::vector<std::uint8_t> y_;
};

struct LossWeights {
  double cw = 1.0;
  double ca = 0.1;
  double mil = 0.1;

  void validate() const {
    if (!(cw >= 0 && ca >= 0 && mil >= 0)) throw ConfigError("loss weights must be >= 0");
  }
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossBreakdown {
  double cw = 0;
  double ca = 0;
  double mil = 0;
  double total = 0;
};

/// y extended with `background_value` in slot C (when use_background), divided by its sum.
inline std::vector<double> normalized_target(const LabelVector& y, int background_value, bool use_background) {
  if (y.positives() == 0) throw InputError("normalized_target: label vector has no positive class");
  if (background_value != 0 && background_value != 1) throw ContractError("normalized_target: background value must be 0 or 1");
  std::vector<double> t(y.values().begin(), y.values().end());
  if (use_background) t.push_back(background_value);
  double total = 0;
  for (double v : t) total += v;
  for (auto& v : t) v /= total;
  return t;
}

/// -<target, log max(p, 1e-12)>.
template <typename T>
T nce_loss(std::span<const T> p, std::span<const double> target) {
  if (p.size() != target.size()) {
    throw ContractError("nce_loss: length " + std::to_string(p.size()) + " vs target " + std::to_string(target.size()));
  }
  T acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (target[i] != 0) acc -= static_cast<T>(target[i]) * std::log(std::max(p[i], static_cast<T>(kLogFloor)));
  }
  return acc;
}

namespace detail {

template <typename T>
Matrix<T> target_column(const std::vector<double>& t) {
  Matrix<T> m(t.size(), 1);
  for (std::size_t i = 0; i < t.size(); ++i) m(i, 0) = static_cast<T>(t[i]);
  return m;
}

struct BranchTargets {
  std::vector<double> cw_ca;
  std::vector<double> mil;
};

inline BranchTargets branch_targets(const LabelVector& y, bool use_background) {
  // The MIL target marks background present in every video.
  return {normalized_target(y, 0, use_background), normalized_target(y, 1, use_background)};
}

}  // namespace detail

template <typename T>
LossBreakdown total_loss(const BranchOutputs<T>& out, const LabelVector& y, const LossWeights& weights,
                         bool use_background) {
  const auto targets = detail::branch_targets(y, use_background);
  LossBreakdown b;
  b.cw = static_cast<double>(nce_loss<T>(out.p_a.values(), targets.cw_ca));
  b.ca = static_cast<double>(nce_loss<T>(out.p_f.values(), targets.cw_ca));
  b.mil = static_cast<double>(nce_loss<T>(out.p_m.values(), targets.mil));
  b.total = weights.cw * b.cw + weights.ca * b.ca + weights.mil * b.mil;
  return b;
}

struct LossNodes {
  NodeId cw, ca, mil, total;
};

template <typename T>
LossNodes append_total_loss(Tape<T>& tape, const ForwardNodes& n, const LabelVector& y, const LossWeights& weights,
                            bool use_background) {
  const auto targets = detail::branch_targets(y, use_background);
  if (targets.cw_ca.size() != tape.value(n.p_a).rows()) {
    throw ContractError("total_loss: label width " + std::to_string(y.size()) + " does not match model classes");
  }
  LossNodes l;
  l.cw = tape.nce(n.p_a, detail::target_column<T>(targets.cw_ca));
  l.ca = tape.nce(n.p_f, detail::target_column<T>(targets.cw_ca));
  l.mil = tape.nce(n.p_m, detail::target_column<T>(targets.mil));
  l.total = tape.combine({l.cw, l.ca, l.mil},
                         {static_cast<T>(weights.cw), static_cast<T>(weights.ca), static_cast<T>(weights.mil)});
  return l;
}

}  // namespace facnet
