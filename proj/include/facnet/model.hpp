#pragma once

// Feature embedding plus the class-wise foreground (CW), class-agnostic
// attention (CA) and MIL branches, each run once per attention temperature.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "facnet/numcore/tape.hpp"
#include "facnet/random.hpp"

namespace facnet {

struct ModelConfig {
  std::size_t num_classes = 20;
  std::size_t feature_dim = 1024;
  std::array<std::size_t, 2> embed_dims{1024, 1024};
  std::size_t kernel_size = 3;
  double delta = 5.0;
  std::vector<double> temperatures{1.0, 2.0, 5.0};
  bool use_background = true;
  double dropout_rate = 0.5;

  /// Width of the class axis: C+1 with the background class, C without.
  std::size_t score_width() const { return num_classes + (use_background ? 1 : 0); }
  std::size_t embed_dim() const { return embed_dims[1]; }

  void validate() const {
    if (num_classes == 0) throw ConfigError("model.num_classes must be >= 1");
    if (feature_dim == 0) throw ConfigError("model.feature_dim must be >= 1");
    if (embed_dims[0] == 0 || embed_dims[1] == 0) throw ConfigError("model.embed_dims must be >= 1");
    if (kernel_size == 0 || kernel_size % 2 == 0) throw ConfigError("model.kernel_size must be odd");
    if (!(delta > 0)) throw ConfigError("model.delta must be > 0");
    if (temperatures.empty()) throw ConfigError("model.temperatures must be non-empty");
    for (double t : temperatures) {
      if (!(t > 0)) throw ConfigError("model.temperatures entries must be > 0");
    }
    if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError("model.dropout_rate must be in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr std::array<const char*, 6> kParamNames{"conv1.weight", "conv1.bias", "conv2.weight",
                                                        "conv2.bias",   "w_a",        "w_f"};

template <typename T>
struct ModelParams {
  Matrix<T> conv1_w;  // e1 × (k·D_in)
  Matrix<T> conv1_b;  // 1 × e1
  Matrix<T> conv2_w;  // e2 × (k·e1)
  Matrix<T> conv2_b;  // 1 × e2
  Matrix<T> w_a;      // (C+1) × e2, or C × e2 without background
  Matrix<T> w_f;      // 1 × e2

  std::array<Matrix<T>*, 6> tensors() { return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &w_a, &w_f}; }
  std::array<const Matrix<T>*, 6> tensors() const { return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &w_a, &w_f}; }

  std::vector<Matrix<T>> to_list() const {
    std::vector<Matrix<T>> out;
    for (const auto* m : tensors()) out.push_back(*m);
    return out;
  }
  static ModelParams from_list(std::vector<Matrix<T>> list) {
    if (list.size() != 6) throw ContractError("ModelParams::from_list: expected 6 tensors");
    ModelParams p;
    auto dst = p.tensors();
    for (std::size_t i = 0; i < 6; ++i) *dst[i] = std::move(list[i]);
    return p;
  }

  static std::array<std::pair<std::size_t, std::size_t>, 6> expected_shapes(const ModelConfig& c) {
    const std::size_t k = c.kernel_size, e1 = c.embed_dims[0], e2 = c.embed_dims[1];
    return {{{e1, k * c.feature_dim}, {1, e1}, {e2, k * e1}, {1, e2}, {c.score_width(), e2}, {1, e2}}};
  }

  void validate(const ModelConfig& c) const {
    const auto shapes = expected_shapes(c);
    const auto ts = tensors();
    for (std::size_t i = 0; i < 6; ++i) {
      if (ts[i]->rows() != shapes[i].first || ts[i]->cols() != shapes[i].second) {
        throw ContractError(std::string("parameter ") + kParamNames[i] + " has shape " + ts[i]->shape_string() +
                            ", expected " + std::to_string(shapes[i].first) + "x" + std::to_string(shapes[i].second));
      }
    }
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < 6; ++i) *dst[i] = matrix_cast<U>(*src[i]);
    return out;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Zero-mean uniform initialisation in ±1/sqrt(fan_in); biases start at zero.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams<T> p;
  const auto shapes = ModelParams<T>::expected_shapes(config);
  auto ts = p.tensors();
  for (std::size_t i = 0; i < 6; ++i) {
    *ts[i] = Matrix<T>(shapes[i].first, shapes[i].second);
    if (i == 1 || i == 3) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(shapes[i].second));
    for (auto& v : ts[i]->storage()) v = static_cast<T>(rng.uniform(-bound, bound));
  }
  return p;
}

/// Inverted-dropout mask: entries are 0 or 1/(1-rate).
template <typename T>
Matrix<T> dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  Matrix<T> mask(rows, cols);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& v : mask.storage()) v = rng.uniform() < rate ? T{0} : keep_scale;
  return mask;
}

// ---------------------------------------------------------------------------
// Single-head branches over a fixed embedding, evaluated directly on values.

template <typename T>
struct CwHead {
  Matrix<T> s_a;        // T × K
  Matrix<T> attention;  // T × K, columns sum to 1
  Matrix<T> features;   // K × D
  Matrix<T> scores;     // K × 1 (R_a)
};

template <typename T>
struct CaHead {
  Matrix<T> s_f;        // T × 1
  Matrix<T> attention;  // T × 1
  Matrix<T> feature;    // 1 × D
  Matrix<T> logits;     // K × 1
};

template <typename T>
CwHead<T> cw_branch(const Matrix<T>& x_e, const ModelParams<T>& params, T delta, T tau) {
  CwHead<T> h;
  h.s_a = cosine_rows(x_e, params.w_a, delta);
  h.attention = softmax_columns(h.s_a, tau);
  h.features = matmul_tn(h.attention, x_e);
  h.scores = cosine_rows(h.features, params.w_f, delta);
  return h;
}

template <typename T>
CaHead<T> ca_branch(const Matrix<T>& x_e, const ModelParams<T>& params, T delta, T tau) {
  CaHead<T> h;
  h.s_f = cosine_rows(x_e, params.w_f, delta);
  h.attention = softmax_columns(h.s_f, tau);
  h.feature = matmul_tn(h.attention, x_e);
  h.logits = cosine_rows(params.w_a, h.feature, delta);
  return h;
}

/// R_m(j) = sum_t A_a(t,j) * S_a(t,j).
template <typename T>
Matrix<T> mil_branch(const Matrix<T>& s_a, const Matrix<T>& a_a) {
  if (!s_a.same_shape(a_a)) throw ContractError("mil_branch: S_a " + s_a.shape_string() + " vs A_a " + a_a.shape_string());
  return column_dot(a_a, s_a);
}

// ---------------------------------------------------------------------------
// Taped forward pass.

struct HeadNodes {
  NodeId a_a, f_a, r_a, a_f, f_f, ca_logits, r_m;
};

struct ForwardNodes {
  std::array<NodeId, 6> params;
  NodeId x_raw, x_e, s_a, s_f;
  std::vector<HeadNodes> heads;
  NodeId r_a, ca_logits, r_m;  // head averages
  NodeId p_a, p_f, p_m;
};

template <typename T>
NodeId append_embedding(Tape<T>& tape, NodeId x_raw, const std::array<NodeId, 6>& p, const ModelConfig& config,
                        bool train_mode, std::uint64_t seed) {
  Rng rng(seed);
  const bool drop = train_mode && config.dropout_rate > 0;
  NodeId h = tape.conv(x_raw, p[0], p[1], config.kernel_size);
  if (drop) {
    const auto& v = tape.value(h);
    h = tape.mask(h, dropout_mask<T>(v.rows(), v.cols(), config.dropout_rate, rng));
  }
  h = tape.relu(h);
  h = tape.conv(h, p[2], p[3], config.kernel_size);
  if (drop) {
    const auto& v = tape.value(h);
    h = tape.mask(h, dropout_mask<T>(v.rows(), v.cols(), config.dropout_rate, rng));
  }
  return tape.relu(h);
}

/// Records the full multi-temperature forward pass on `tape`. Parameters are
/// trainable leaves; the raw features are a constant leaf.
template <typename T>
ForwardNodes build_forward(Tape<T>& tape, const Matrix<T>& x_raw, const ModelParams<T>& params,
                           const ModelConfig& config, bool train_mode, std::uint64_t seed) {
  config.validate();
  params.validate(config);
  if (x_raw.rows() == 0) throw InputError("forward: video has zero snippets");
  if (x_raw.cols() != config.feature_dim) {
    throw ContractError("forward: feature width " + std::to_string(x_raw.cols()) + " but model expects " +
                        std::to_string(config.feature_dim));
  }

  ForwardNodes n;
  const auto ts = params.tensors();
  for (std::size_t i = 0; i < 6; ++i) n.params[i] = tape.leaf(*ts[i], kParamNames[i], true);
  n.x_raw = tape.leaf(x_raw, "x_raw");
  n.x_e = append_embedding(tape, n.x_raw, n.params, config, train_mode, seed);

  const T delta = static_cast<T>(config.delta);
  const NodeId w_a = n.params[4], w_f = n.params[5];
  n.s_a = tape.cosine(n.x_e, w_a, delta);
  n.s_f = tape.cosine(n.x_e, w_f, delta);

  std::vector<NodeId> r_a, ca, r_m;
  for (double tau_d : config.temperatures) {
    const T tau = static_cast<T>(tau_d);
    HeadNodes h;
    h.a_a = tape.softmax_columns(n.s_a, tau);
    h.f_a = tape.matmul_tn(h.a_a, n.x_e);
    h.r_a = tape.cosine(h.f_a, w_f, delta);
    h.a_f = tape.softmax_columns(n.s_f, tau);
    h.f_f = tape.matmul_tn(h.a_f, n.x_e);
    h.ca_logits = tape.cosine(w_a, h.f_f, delta);
    h.r_m = tape.column_dot(h.a_a, n.s_a);
    r_a.push_back(h.r_a);
    ca.push_back(h.ca_logits);
    r_m.push_back(h.r_m);
    n.heads.push_back(h);
  }
  n.r_a = tape.mean(std::move(r_a));
  n.ca_logits = tape.mean(std::move(ca));
  n.r_m = tape.mean(std::move(r_m));
  n.p_a = tape.softmax_columns(n.r_a, T{1});
  n.p_f = tape.softmax_columns(n.ca_logits, T{1});
  n.p_m = tape.softmax_columns(n.r_m, T{1});
  return n;
}

/// Every intermediate score of one forward pass. Vectors over classes are K×1.
template <typename T>
struct BranchOutputs {
  Matrix<T> x_e;
  Matrix<T> s_a;  // T × K
  Matrix<T> s_f;  // T × 1
  std::vector<Matrix<T>> a_a, f_a, r_a, a_f, f_f, ca_logits, r_m;  // per head
  Matrix<T> r_a_mean, ca_logits_mean, r_m_mean;
  Matrix<T> p_a, p_f, p_m;

  std::size_t num_snippets() const { return x_e.rows(); }
};

template <typename T>
BranchOutputs<T> extract_outputs(const Tape<T>& tape, const ForwardNodes& n) {
  BranchOutputs<T> o;
  o.x_e = tape.value(n.x_e);
  o.s_a = tape.value(n.s_a);
  o.s_f = tape.value(n.s_f);
  for (const auto& h : n.heads) {
    o.a_a.push_back(tape.value(h.a_a));
    o.f_a.push_back(tape.value(h.f_a));
    o.r_a.push_back(tape.value(h.r_a));
    o.a_f.push_back(tape.value(h.a_f));
    o.f_f.push_back(tape.value(h.f_f));
    o.ca_logits.push_back(tape.value(h.ca_logits));
    o.r_m.push_back(tape.value(h.r_m));
  }
  o.r_a_mean = tape.value(n.r_a);
  o.ca_logits_mean = tape.value(n.ca_logits);
  o.r_m_mean = tape.value(n.r_m);
  o.p_a = tape.value(n.p_a);
  o.p_f = tape.value(n.p_f);
  o.p_m = tape.value(n.p_m);
  return o;
}

template <typename T>
Matrix<T> embed(const Matrix<T>& x_raw, const ModelParams<T>& params, const ModelConfig& config, bool train_mode,
                std::uint64_t seed) {
  config.validate();
  params.validate(config);
  if (x_raw.rows() == 0) throw InputError("embed: video has zero snippets");
  if (x_raw.cols() != config.feature_dim) throw ContractError("embed: feature width mismatch");
  Tape<T> tape;
  std::array<NodeId, 6> ids;
  const auto ts = params.tensors();
  for (std::size_t i = 0; i < 6; ++i) ids[i] = tape.leaf(*ts[i]);
  const NodeId x = tape.leaf(x_raw);
  return tape.value(append_embedding(tape, x, ids, config, train_mode, seed));
}

template <typename T>
BranchOutputs<T> forward_hybrid(const Matrix<T>& x_raw, const ModelParams<T>& params, const ModelConfig& config,
                                bool train_mode, std::uint64_t seed) {
  Tape<T> tape;
  const auto nodes = build_forward(tape, x_raw, params, config, train_mode, seed);
  return extract_outputs(tape, nodes);
}

}  // namespace facnet
