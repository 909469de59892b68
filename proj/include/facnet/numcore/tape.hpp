#pragma once

#include <cstddef>
#include <optional>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

#include "facnet/numcore/kernels.hpp"

namespace facnet {

/// Index of a node on a Tape.
struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class Op {
  Leaf,
  Conv,            // temporal_conv(x, w, b)
  Mask,            // x ⊙ recorded mask
  Relu,
  Cosine,          // cosine_rows(a, b, scale)
  SoftmaxColumns,  // softmax_columns(x, tau)
  MatmulTN,        // a^T b
  ColumnDot,       // column_dot(a, b)
  Combine,         // sum_i coeff_i * x_i
  Sum,             // sum of all entries, 1×1
  Nce,             // -<target, log max(p, floor)>, 1×1
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Conv: return "conv";
    case Op::Mask: return "mask";
    case Op::Relu: return "relu";
    case Op::Cosine: return "cosine";
    case Op::SoftmaxColumns: return "softmax";
    case Op::MatmulTN: return "matmul_tn";
    case Op::ColumnDot: return "column_dot";
    case Op::Combine: return "combine";
    case Op::Sum: return "sum";
    case Op::Nce: return "nce";
  }
  return "?";
}

/// Probabilities are clamped to this floor before taking the log.
inline constexpr double kLogFloor = 1e-12;

/// Reverse-mode tape over the fixed operation set in `Op`.
///
/// Nodes are appended in evaluation order, so the node list is always
/// topologically sorted. A tape is single-owner; build it, call backward,
/// discard it.
template <typename T>
class Tape {
 public:
  struct Node {
    Op op = Op::Leaf;
    std::vector<NodeId> inputs;
    T scalar = 0;              // cosine scale or softmax temperature
    std::size_t kernel = 0;    // conv kernel size
    Matrix<T> aux;             // dropout mask or nce target
    std::vector<T> coeffs;     // combine coefficients
    Matrix<T> value;
    std::string name;
    bool trainable = false;
    bool needs_grad = false;
  };

  class Gradients {
   public:
    explicit Gradients(std::vector<Matrix<T>> adjoints) : adjoints_(std::move(adjoints)) {}
    const Matrix<T>& operator[](NodeId id) const { return adjoints_.at(id.index); }
    Matrix<T>& operator[](NodeId id) { return adjoints_.at(id.index); }

   private:
    std::vector<Matrix<T>> adjoints_;
  };

  NodeId leaf(Matrix<T> value, std::string name = {}, bool trainable = false) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.name = std::move(name);
    n.trainable = trainable;
    n.needs_grad = trainable;
    return push(std::move(n));
  }

  NodeId conv(NodeId x, NodeId w, NodeId b, std::size_t kernel) {
    Node n = make(Op::Conv, {x, w, b});
    n.kernel = kernel;
    return push(std::move(n));
  }

  NodeId mask(NodeId x, Matrix<T> mask) {
    value(x).require_same_shape(mask, "Tape::mask");
    Node n = make(Op::Mask, {x});
    n.aux = std::move(mask);
    return push(std::move(n));
  }

  NodeId relu(NodeId x) { return push(make(Op::Relu, {x})); }

  NodeId cosine(NodeId a, NodeId b, T scale) {
    Node n = make(Op::Cosine, {a, b});
    n.scalar = scale;
    return push(std::move(n));
  }

  NodeId softmax_columns(NodeId x, T tau) {
    Node n = make(Op::SoftmaxColumns, {x});
    n.scalar = tau;
    return push(std::move(n));
  }

  NodeId matmul_tn(NodeId a, NodeId b) { return push(make(Op::MatmulTN, {a, b})); }
  NodeId column_dot(NodeId a, NodeId b) { return push(make(Op::ColumnDot, {a, b})); }

  NodeId combine(std::vector<NodeId> xs, std::vector<T> coeffs) {
    if (xs.empty() || xs.size() != coeffs.size()) throw ContractError("Tape::combine: bad operand count");
    for (auto id : xs) value(xs.front()).require_same_shape(value(id), "Tape::combine");
    Node n = make(Op::Combine, std::move(xs));
    n.coeffs = std::move(coeffs);
    return push(std::move(n));
  }

  NodeId mean(std::vector<NodeId> xs) {
    const T w = T{1} / static_cast<T>(xs.size());
    std::vector<T> coeffs(xs.size(), w);
    return combine(std::move(xs), std::move(coeffs));
  }

  NodeId sum(NodeId x) { return push(make(Op::Sum, {x})); }

  NodeId nce(NodeId p, Matrix<T> target) {
    value(p).require_same_shape(target, "Tape::nce");
    Node n = make(Op::Nce, {p});
    n.aux = std::move(target);
    return push(std::move(n));
  }

  const Matrix<T>& value(NodeId id) const { return nodes_.at(id.index).value; }
  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Corrupts the adjoint of one op kind. Used to prove the gradient check
  /// actually catches broken rules.
  void inject_fault(std::optional<Op> op) { fault_ = op; }

  /// Reverse sweep from a scalar node. Adjoints are populated for every node
  /// that depends on a trainable leaf; others are left empty.
  Gradients backward(NodeId loss) const {
    const Matrix<T>& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw ContractError("Tape::backward: loss must be 1x1, got " + lv.shape_string());

    std::vector<Matrix<T>> adj(nodes_.size());
    adj[loss.index] = Matrix<T>(1, 1, T{1});
    for (std::size_t idx = loss.index + 1; idx-- > 0;) {
      const Node& n = nodes_[idx];
      if (!n.needs_grad || adj[idx].empty() || n.op == Op::Leaf) continue;
      propagate(n, adj[idx], adj);
    }
    return Gradients(std::move(adj));
  }

  /// Re-evaluates every node from the stored leaf values.
  std::vector<Matrix<T>> replay() const {
    std::vector<Matrix<T>> vals;
    vals.reserve(nodes_.size());
    for (const Node& n : nodes_) vals.push_back(n.op == Op::Leaf ? n.value : evaluate(n, vals));
    return vals;
  }

 private:
  Node make(Op op, std::vector<NodeId> inputs) const {
    Node n;
    n.op = op;
    for (auto id : inputs) {
      if (id.index >= nodes_.size()) throw ContractError("Tape: dangling input reference");
      n.needs_grad = n.needs_grad || nodes_[id.index].needs_grad;
    }
    n.inputs = std::move(inputs);
    return n;
  }

  NodeId push(Node n) {
    if (n.op != Op::Leaf) n.value = evaluate(n, nodes_);
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
  }

  template <typename Store>
  static const Matrix<T>& at(const Store& store, NodeId id) {
    if constexpr (std::is_same_v<Store, std::vector<Node>>) {
      return store[id.index].value;
    } else {
      return store[id.index];
    }
  }

  template <typename Store>
  static Matrix<T> evaluate(const Node& n, const Store& s) {
    switch (n.op) {
      case Op::Leaf:
        throw ContractError("Tape: leaf has no forward rule");
      case Op::Conv:
        return temporal_conv(at(s, n.inputs[0]), at(s, n.inputs[1]), at(s, n.inputs[2]), n.kernel);
      case Op::Mask: {
        Matrix<T> out = at(s, n.inputs[0]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= n.aux[i];
        return out;
      }
      case Op::Relu: {
        Matrix<T> out = at(s, n.inputs[0]);
        for (auto& v : out.storage()) v = v > T{0} ? v : T{0};
        return out;
      }
      case Op::Cosine:
        return facnet::cosine_rows(at(s, n.inputs[0]), at(s, n.inputs[1]), n.scalar);
      case Op::SoftmaxColumns:
        return facnet::softmax_columns(at(s, n.inputs[0]), n.scalar);
      case Op::MatmulTN:
        return facnet::matmul_tn(at(s, n.inputs[0]), at(s, n.inputs[1]));
      case Op::ColumnDot:
        return facnet::column_dot(at(s, n.inputs[0]), at(s, n.inputs[1]));
      case Op::Combine: {
        Matrix<T> out(at(s, n.inputs[0]).rows(), at(s, n.inputs[0]).cols());
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const auto& x = at(s, n.inputs[k]);
          for (std::size_t i = 0; i < out.size(); ++i) out[i] += n.coeffs[k] * x[i];
        }
        return out;
      }
      case Op::Sum: {
        const auto& x = at(s, n.inputs[0]);
        T acc = 0;
        for (T v : x.storage()) acc += v;
        return Matrix<T>(1, 1, acc);
      }
      case Op::Nce: {
        const auto& p = at(s, n.inputs[0]);
        const T floor = static_cast<T>(kLogFloor);
        T acc = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (n.aux[i] != T{0}) acc -= n.aux[i] * std::log(std::max(p[i], floor));
        }
        return Matrix<T>(1, 1, acc);
      }
    }
    throw ContractError("Tape: unknown op");
  }

  void accumulate(std::vector<Matrix<T>>& adj, NodeId id, Matrix<T> g, Op from) const {
    const Node& target = nodes_[id.index];
    if (!target.needs_grad) return;
    if (fault_ && *fault_ == from) g *= static_cast<T>(1.25);
    if (adj[id.index].empty()) {
      adj[id.index] = std::move(g);
    } else {
      adj[id.index] += g;
    }
  }

  bool wants(NodeId id) const { return nodes_[id.index].needs_grad; }

  void propagate(const Node& n, const Matrix<T>& g, std::vector<Matrix<T>>& adj) const {
    const auto& in = n.inputs;
    switch (n.op) {
      case Op::Leaf:
        return;
      case Op::Conv: {
        auto grads = temporal_conv_backward(value(in[0]), value(in[1]), n.kernel, g, wants(in[0]));
        if (wants(in[0])) accumulate(adj, in[0], std::move(grads.dx), n.op);
        accumulate(adj, in[1], std::move(grads.dw), n.op);
        accumulate(adj, in[2], std::move(grads.db), n.op);
        return;
      }
      case Op::Mask: {
        Matrix<T> gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= n.aux[i];
        accumulate(adj, in[0], std::move(gx), n.op);
        return;
      }
      case Op::Relu: {
        Matrix<T> gx = g;
        const auto& y = n.value;
        for (std::size_t i = 0; i < gx.size(); ++i) {
          if (!(y[i] > T{0})) gx[i] = 0;
        }
        accumulate(adj, in[0], std::move(gx), n.op);
        return;
      }
      case Op::Cosine: {
        auto grads = cosine_rows_backward(value(in[0]), value(in[1]), n.scalar, n.value, g);
        accumulate(adj, in[0], std::move(grads.da), n.op);
        accumulate(adj, in[1], std::move(grads.db), n.op);
        return;
      }
      case Op::SoftmaxColumns:
        accumulate(adj, in[0], softmax_columns_backward(n.value, n.scalar, g), n.op);
        return;
      case Op::MatmulTN: {
        // out = A^T B:  dA = B g^T,  dB = A g
        const auto& a = value(in[0]);
        const auto& b = value(in[1]);
        if (wants(in[0])) {
          Matrix<T> ga(a.rows(), a.cols());
          detail::as_eigen(ga).noalias() = detail::as_eigen(b) * detail::as_eigen(g).transpose();
          accumulate(adj, in[0], std::move(ga), n.op);
        }
        if (wants(in[1])) {
          Matrix<T> gb(b.rows(), b.cols());
          detail::as_eigen(gb).noalias() = detail::as_eigen(a) * detail::as_eigen(g);
          accumulate(adj, in[1], std::move(gb), n.op);
        }
        return;
      }
      case Op::ColumnDot: {
        const auto& a = value(in[0]);
        const auto& b = value(in[1]);
        Matrix<T> ga(a.rows(), a.cols()), gb(b.rows(), b.cols());
        for (std::size_t t = 0; t < a.rows(); ++t) {
          for (std::size_t c = 0; c < a.cols(); ++c) {
            ga(t, c) = g(c, 0) * b(t, c);
            gb(t, c) = g(c, 0) * a(t, c);
          }
        }
        accumulate(adj, in[0], std::move(ga), n.op);
        accumulate(adj, in[1], std::move(gb), n.op);
        return;
      }
      case Op::Combine:
        for (std::size_t k = 0; k < in.size(); ++k) {
          Matrix<T> gx = g;
          gx *= n.coeffs[k];
          accumulate(adj, in[k], std::move(gx), n.op);
        }
        return;
      case Op::Sum: {
        const auto& x = value(in[0]);
        accumulate(adj, in[0], Matrix<T>(x.rows(), x.cols(), g[0]), n.op);
        return;
      }
      case Op::Nce: {
        const auto& p = value(in[0]);
        const T floor = static_cast<T>(kLogFloor);
        Matrix<T> gp(p.rows(), p.cols());
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (p[i] > floor) gp[i] = -g[0] * n.aux[i] / p[i];
        }
        accumulate(adj, in[0], std::move(gp), n.op);
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::optional<Op> fault_;
};

}  // namespace facnet
