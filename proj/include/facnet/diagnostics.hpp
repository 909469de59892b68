#pragma once

// Finite-difference verification of the full model gradient on random tiny
// instances. Shared by the command-line tool and the acceptance suite.

#include <optional>
#include <string>
#include <vector>

#include "facnet/losses.hpp"
#include "facnet/numcore/gradcheck.hpp"

namespace facnet {

struct TinyInstance {
  ModelConfig config;
  ModelParams<double> params;
  Matrix<double> x;
  LabelVector labels;
};

/// T <= 8, C <= 4, D <= 16, small embedding, default temperatures and δ.
inline TinyInstance random_tiny_instance(Rng& rng) {
  TinyInstance inst;
  auto& c = inst.config;
  c.num_classes = static_cast<std::size_t>(rng.integer(1, 4));
  c.feature_dim = static_cast<std::size_t>(rng.integer(1, 16));
  const auto e = static_cast<std::size_t>(rng.integer(2, 6));
  c.embed_dims = {e, static_cast<std::size_t>(rng.integer(2, 6))};
  c.use_background = rng.uniform() < 0.75;
  c.dropout_rate = 0.0;
  inst.params = init_params<double>(c, static_cast<std::uint64_t>(rng.integer(0, 1LL << 40)));
  for (auto* b : {&inst.params.conv1_b, &inst.params.conv2_b}) {
    for (auto& v : b->storage()) v = rng.uniform(0.05, 0.3);
  }
  inst.x = Matrix<double>(static_cast<std::size_t>(rng.integer(1, 8)), c.feature_dim);
  for (auto& v : inst.x.storage()) v = rng.normal();
  std::vector<std::uint8_t> y(c.num_classes, 0);
  y[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(c.num_classes) - 1))] = 1;
  for (auto& v : y) {
    if (rng.uniform() < 0.3) v = 1;
  }
  inst.labels = LabelVector(std::move(y));
  return inst;
}

/// Central-difference check (step 1e-5) of d L_total / d params at 64-bit.
/// Round-off in the difference is about 1e-11 here, so gradients below 1e-6
/// are compared on absolute rather than relative error.
inline GradCheckReport check_instance(const TinyInstance& inst, const LossWeights& weights,
                                      std::optional<Op> fault = std::nullopt) {
  const auto& mc = inst.config;
  Tape<double> tape;
  tape.inject_fault(fault);
  const auto nodes = build_forward(tape, inst.x, inst.params, mc, false, 0);
  const auto loss = append_total_loss(tape, nodes, inst.labels, weights, mc.use_background);
  const auto adj = tape.backward(loss.total);
  std::vector<Matrix<double>> analytic;
  const auto ts = inst.params.tensors();
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& g = adj[nodes.params[i]];
    analytic.push_back(g.empty() ? Matrix<double>(ts[i]->rows(), ts[i]->cols()) : g);
  }
  auto list = inst.params.to_list();
  const std::vector<std::string> names(kParamNames.begin(), kParamNames.end());
  auto objective = [&](const std::vector<Matrix<double>>& p) {
    const auto params = ModelParams<double>::from_list(p);
    return total_loss(forward_hybrid(inst.x, params, mc, false, 0), inst.labels, weights, mc.use_background).total;
  };
  return finite_diff_check<double>(objective, list, analytic, 1e-5, names, 1e-6);
}

inline std::optional<Op> parse_fault(const std::string& name) {
  if (name.empty() || name == "none") return std::nullopt;
  for (Op op : {Op::Conv, Op::Mask, Op::Relu, Op::Cosine, Op::SoftmaxColumns, Op::MatmulTN, Op::ColumnDot, Op::Combine,
                Op::Sum, Op::Nce}) {
    if (name == op_name(op)) return op;
  }
  throw ConfigError("unknown operation '" + name + "' for fault injection");
}

}  // namespace facnet
