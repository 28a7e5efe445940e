#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deltaedit/error.hpp"
#include "deltaedit/tensor.hpp"

namespace deltaedit::ad {

enum class OpKind {
  Input,
  Parameter,
  Constant,
  MatMul,
  Add,
  Sub,
  Scale,
  Concat,
  Slice,
  LeakyRelu,
  Relu,
  GroupNorm,
  AffineModulate,
  RowL2Norm,
  RowCosine,
  Mean,
  MeanAbs,
  MeanSquare,
};

inline const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Scale: return "scale";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Relu: return "relu";
    case OpKind::GroupNorm: return "group_norm";
    case OpKind::AffineModulate: return "affine_modulate";
    case OpKind::RowL2Norm: return "row_l2_norm";
    case OpKind::RowCosine: return "row_cosine";
    case OpKind::Mean: return "mean";
    case OpKind::MeanAbs: return "mean_abs";
    case OpKind::MeanSquare: return "mean_square";
  }
  return "unknown";
}

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

/// Ordered, named collection of tensors. Insertion order is the canonical
/// order for optimizer state and checkpoint blobs.
class ParameterSet {
 public:
  void add(std::string name, Tensor value) {
    if (index_.contains(name)) {
      throw Error(ErrorCode::InvalidArgument, "duplicate parameter '" + name + "'");
    }
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t index_of(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) {
      throw Error(ErrorCode::InvalidArgument, "unknown parameter '" + name + "'");
    }
    return it->second;
  }

  Tensor& get(const std::string& name) { return tensors_[index_of(name)]; }
  const Tensor& get(const std::string& name) const { return tensors_[index_of(name)]; }

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  const std::vector<std::string>& names() const noexcept { return names_; }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  ParameterSet zeros_like() const {
    ParameterSet out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor::zeros_like(tensors_[i]));
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Gradients = ParameterSet;
using Bindings = std::map<std::string, Tensor, std::less<>>;

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

inline ConstMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
}

inline MutMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

/// Product of two mapped matrices. Operands are copied into owned, aligned
/// storage first: Eigen picks its kernels by pointer alignment, and heap
/// blocks from std::vector are not reliably aligned, which otherwise changes
/// the summation order from run to run.
template <class A, class B>
RowMatrix product(const A& a, const B& b) {
  const RowMatrix lhs = a;
  const RowMatrix rhs = b;
  RowMatrix out(lhs.rows(), rhs.cols());
  out.noalias() = lhs * rhs;
  return out;
}

}  // namespace detail

/// A static computation graph. Nodes are appended in construction order,
/// which is therefore a topological order; forward() evaluates the
/// ancestors of the root in that order and backward() walks them in
/// reverse, visiting each exactly once.
///
/// Parameter values are referenced, not copied: the ParameterSet passed to
/// forward() must stay alive and unmodified until backward() returns.
class Graph {
 public:
  NodeId input(std::string name) { return push(OpKind::Input, {}, std::move(name)); }
  NodeId parameter(std::string name) { return push(OpKind::Parameter, {}, std::move(name)); }

  NodeId constant(Tensor value) {
    const NodeId id = push(OpKind::Constant, {}, {});
    nodes_[id.index].value = std::move(value);
    return id;
  }

  /// [M,K] x [K,N] -> [M,N]. A rank-1 left operand is a row; a rank-1 right
  /// operand is a column and yields a rank-1 result.
  NodeId matmul(NodeId a, NodeId b) { return push(OpKind::MatMul, {a, b}); }

  /// Elementwise sum. `b` may also be a rank-1 row broadcast over a's rows,
  /// or a single element broadcast everywhere.
  NodeId add(NodeId a, NodeId b) { return push(OpKind::Add, {a, b}); }
  NodeId sub(NodeId a, NodeId b) { return push(OpKind::Sub, {a, b}); }

  /// a * factor + offset.
  NodeId scale(NodeId a, double factor, double offset = 0.0) {
    const NodeId id = push(OpKind::Scale, {a});
    nodes_[id.index].real0 = factor;
    nodes_[id.index].real1 = offset;
    return id;
  }

  /// Concatenation along the last axis.
  NodeId concat(std::initializer_list<NodeId> parts) {
    return push(OpKind::Concat, std::vector<NodeId>(parts));
  }
  NodeId concat(const std::vector<NodeId>& parts) { return push(OpKind::Concat, parts); }

  /// Columns [begin, end) of the last axis.
  NodeId slice(NodeId a, std::size_t begin, std::size_t end) {
    const NodeId id = push(OpKind::Slice, {a});
    nodes_[id.index].size0 = begin;
    nodes_[id.index].size1 = end;
    return id;
  }

  NodeId leaky_relu(NodeId a, double slope = 0.2) {
    const NodeId id = push(OpKind::LeakyRelu, {a});
    nodes_[id.index].real0 = slope;
    return id;
  }

  NodeId relu(NodeId a) { return push(OpKind::Relu, {a}); }

  /// Per-row group normalization without affine terms. The group variance is
  /// floored at `eps`, so a constant group maps to zeros.
  NodeId group_norm(NodeId a, std::size_t groups, double eps = 1e-6) {
    const NodeId id = push(OpKind::GroupNorm, {a});
    nodes_[id.index].size0 = groups;
    nodes_[id.index].real0 = eps;
    return id;
  }

  /// x * (1 + scale) + shift, all operands of equal shape.
  NodeId affine_modulate(NodeId x, NodeId scale, NodeId shift) {
    return push(OpKind::AffineModulate, {x, scale, shift});
  }

  /// Euclidean norm of each row -> [rows, 1]. Gradient at a zero row is zero.
  NodeId row_l2_norm(NodeId a) { return push(OpKind::RowL2Norm, {a}); }

  /// Cosine similarity of matching rows -> [rows, 1]. When the product of
  /// norms is at or below `eps` the denominator is clamped to `eps` and the
  /// gradient is defined as zero.
  NodeId row_cosine(NodeId a, NodeId b, double eps = 1e-12) {
    const NodeId id = push(OpKind::RowCosine, {a, b});
    nodes_[id.index].real0 = eps;
    return id;
  }

  NodeId mean(NodeId a) { return push(OpKind::Mean, {a}); }
  NodeId mean_abs(NodeId a) { return push(OpKind::MeanAbs, {a}); }
  NodeId mean_square(NodeId a) { return push(OpKind::MeanSquare, {a}); }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  OpKind kind(NodeId id) const { return nodes_.at(id.index).kind; }

  /// Evaluates every ancestor of `root` and returns the root value.
  const Tensor& forward(NodeId root, const Bindings& inputs, const ParameterSet& params) {
    check_id(root);
    bound_params_ = &params;
    forward_done_ = false;
    mark_ancestors(root);
    for (std::uint32_t i = 0; i <= root.index; ++i) {
      if (!active_[i]) continue;
      evaluate(i, inputs, params);
    }
    forward_root_ = root;
    forward_done_ = true;
    return value(root);
  }

  const Tensor& forward(NodeId root, const Bindings& inputs) {
    static const ParameterSet empty;
    return forward(root, inputs, empty);
  }

  /// Value computed by the last forward(); inputs and parameters included.
  const Tensor& value(NodeId id) const {
    const Node& node = nodes_.at(id.index);
    return node.external != nullptr ? *node.external : node.value;
  }

  /// Gradient of the (single-element) root with respect to every tensor in
  /// the ParameterSet given to forward(). Parameters not reached by the
  /// graph get zero gradients.
  Gradients backward() { return backward(forward_root_); }

  Gradients backward(NodeId root) {
    if (!forward_done_ || !(root == forward_root_)) {
      throw Error(ErrorCode::InvalidArgument, "backward() requires forward() on the same root");
    }
    const Tensor& root_value = value(root);
    if (root_value.size() != 1) {
      throw Error(ErrorCode::ShapeMismatch, "backward() root must be scalar, got shape " +
                                                root_value.shape_string());
    }
    grads_.assign(nodes_.size(), Tensor{});
    grads_[root.index] = Tensor(root_value.shape(), 1.0);

    for (std::uint32_t i = root.index + 1; i-- > 0;) {
      if (!active_[i] || grads_[i].empty()) continue;
      propagate(i);
    }

    Gradients out = bound_params_->zeros_like();
    for (std::uint32_t i = 0; i <= root.index; ++i) {
      const Node& node = nodes_[i];
      if (!active_[i] || node.kind != OpKind::Parameter || grads_[i].empty()) continue;
      Tensor& dst = out.get(node.name);
      const Tensor& src = grads_[i];
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    return out;
  }

  /// Gradient with respect to a named input after backward().
  const Tensor& input_gradient(NodeId id) const { return grads_.at(id.index); }

 private:
  struct Node {
    OpKind kind = OpKind::Input;
    std::vector<std::uint32_t> parents;
    std::string name;
    Tensor value;
    const Tensor* external = nullptr;
    double real0 = 0.0;
    double real1 = 0.0;
    std::size_t size0 = 0;
    std::size_t size1 = 0;
    std::vector<double> cache;  // op-specific forward intermediates
  };

  NodeId push(OpKind kind, const std::vector<NodeId>& parents, std::string name = {}) {
    Node node;
    node.kind = kind;
    node.name = std::move(name);
    for (NodeId p : parents) {
      check_id(p);
      node.parents.push_back(p.index);
    }
    nodes_.push_back(std::move(node));
    active_.push_back(false);
    forward_done_ = false;
    return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void check_id(NodeId id) const {
    if (id.index >= nodes_.size()) {
      throw Error(ErrorCode::InvalidArgument, "node id out of range");
    }
  }

  void mark_ancestors(NodeId root) {
    std::fill(active_.begin(), active_.end(), false);
    active_[root.index] = true;
    for (std::uint32_t i = root.index + 1; i-- > 0;) {
      if (!active_[i]) continue;
      for (std::uint32_t p : nodes_[i].parents) active_[p] = true;
    }
  }

  const Tensor& parent_value(const Node& node, std::size_t k) const {
    return value(NodeId{node.parents[k]});
  }

  [[noreturn]] void shape_error(const Node& node, const std::string& detail) const {
    std::string shapes;
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      if (k != 0) shapes += ", ";
      shapes += parent_value(node, k).shape_string();
    }
    throw Error(ErrorCode::ShapeMismatch,
                std::string("op '") + op_name(node.kind) + "' " + detail + "; operand shapes " +
                    shapes);
  }

  void evaluate(std::uint32_t i, const Bindings& inputs, const ParameterSet& params) {
    Node& node = nodes_[i];
    node.external = nullptr;
    switch (node.kind) {
      case OpKind::Input: {
        const auto it = inputs.find(node.name);
        if (it == inputs.end()) {
          throw Error(ErrorCode::InvalidArgument, "unbound input '" + node.name + "'");
        }
        node.external = &it->second;
        return;
      }
      case OpKind::Parameter:
        if (!params.contains(node.name)) {
          throw Error(ErrorCode::InvalidArgument, "unbound parameter '" + node.name + "'");
        }
        node.external = &params.get(node.name);
        return;
      case OpKind::Constant:
        return;
      case OpKind::MatMul: return eval_matmul(node);
      case OpKind::Add: return eval_add(node);
      case OpKind::Sub: {
        const Tensor& a = parent_value(node, 0);
        const Tensor& b = parent_value(node, 1);
        if (a.shape() != b.shape()) shape_error(node, "requires equal shapes");
        node.value = a;
        for (std::size_t k = 0; k < a.size(); ++k) node.value[k] -= b[k];
        return;
      }
      case OpKind::Scale: {
        node.value = parent_value(node, 0);
        for (double& v : node.value.data()) v = v * node.real0 + node.real1;
        return;
      }
      case OpKind::Concat: return eval_concat(node);
      case OpKind::Slice: {
        const Tensor& a = parent_value(node, 0);
        if (node.size0 >= node.size1 || node.size1 > a.cols()) {
          shape_error(node, "range [" + std::to_string(node.size0) + ", " +
                                std::to_string(node.size1) + ") invalid");
        }
        const std::size_t width = node.size1 - node.size0;
        Tensor::Shape shape = a.shape();
        shape.back() = width;
        node.value = Tensor(shape);
        for (std::size_t r = 0; r < a.rows(); ++r) {
          std::copy_n(a.row(r).begin() + static_cast<std::ptrdiff_t>(node.size0), width,
                      node.value.row(r).begin());
        }
        return;
      }
      case OpKind::LeakyRelu: {
        node.value = parent_value(node, 0);
        for (double& v : node.value.data()) v = v >= 0.0 ? v : v * node.real0;
        return;
      }
      case OpKind::Relu: {
        node.value = parent_value(node, 0);
        for (double& v : node.value.data()) v = v >= 0.0 ? v : 0.0;
        return;
      }
      case OpKind::GroupNorm: return eval_group_norm(node);
      case OpKind::AffineModulate: {
        const Tensor& x = parent_value(node, 0);
        const Tensor& sc = parent_value(node, 1);
        const Tensor& sh = parent_value(node, 2);
        if (x.shape() != sc.shape() || x.shape() != sh.shape()) {
          shape_error(node, "requires equal shapes");
        }
        node.value = x;
        for (std::size_t k = 0; k < x.size(); ++k) node.value[k] = x[k] * (1.0 + sc[k]) + sh[k];
        return;
      }
      case OpKind::RowL2Norm: {
        const Tensor& a = parent_value(node, 0);
        node.value = Tensor({a.rows(), 1});
        for (std::size_t r = 0; r < a.rows(); ++r) node.value[r] = l2_norm(a.row(r));
        return;
      }
      case OpKind::RowCosine: return eval_cosine(node);
      case OpKind::Mean: {
        const Tensor& a = parent_value(node, 0);
        if (a.empty()) shape_error(node, "requires a non-empty operand");
        double acc = 0.0;
        for (double v : a.data()) acc += v;
        node.value = Tensor::scalar(acc / static_cast<double>(a.size()));
        return;
      }
      case OpKind::MeanAbs: {
        const Tensor& a = parent_value(node, 0);
        if (a.empty()) shape_error(node, "requires a non-empty operand");
        double acc = 0.0;
        for (double v : a.data()) acc += std::abs(v);
        node.value = Tensor::scalar(acc / static_cast<double>(a.size()));
        return;
      }
      case OpKind::MeanSquare: {
        const Tensor& a = parent_value(node, 0);
        if (a.empty()) shape_error(node, "requires a non-empty operand");
        double acc = 0.0;
        for (double v : a.data()) acc += v * v;
        node.value = Tensor::scalar(acc / static_cast<double>(a.size()));
        return;
      }
    }
  }

  struct MatMulDims {
    std::size_t m, k, n;
    bool vector_result;
  };

  MatMulDims matmul_dims(const Node& node) const {
    const Tensor& a = parent_value(node, 0);
    const Tensor& b = parent_value(node, 1);
    const bool b_column = b.rank() == 1;
    const std::size_t m = a.rows();
    const std::size_t k = a.cols();
    const std::size_t bk = b_column ? b.size() : b.rows();
    const std::size_t n = b_column ? 1 : b.cols();
    if (a.rank() > 2 || b.rank() > 2 || k != bk) shape_error(node, "inner dimensions differ");
    return {m, k, n, b_column};
  }

  void eval_matmul(Node& node) {
    const auto d = matmul_dims(node);
    const Tensor& a = parent_value(node, 0);
    const Tensor& b = parent_value(node, 1);
    node.value = d.vector_result ? Tensor({d.m}) : Tensor({d.m, d.n});
    auto out = detail::as_matrix(node.value, d.m, d.n);
    out = detail::product(detail::as_matrix(a, d.m, d.k), detail::as_matrix(b, d.k, d.n));
  }

  enum class Broadcast { None, Row, Scalar };

  Broadcast add_mode(const Node& node) const {
    const Tensor& a = parent_value(node, 0);
    const Tensor& b = parent_value(node, 1);
    if (a.shape() == b.shape()) return Broadcast::None;
    if (b.rank() == 1 && b.size() == a.cols()) return Broadcast::Row;
    if (b.size() == 1) return Broadcast::Scalar;
    shape_error(node, "requires equal shapes or a broadcastable right operand");
  }

  void eval_add(Node& node) {
    const Tensor& a = parent_value(node, 0);
    const Tensor& b = parent_value(node, 1);
    const Broadcast mode = add_mode(node);
    node.value = a;
    const std::size_t cols = a.cols();
    for (std::size_t k = 0; k < a.size(); ++k) {
      node.value[k] += mode == Broadcast::None ? b[k] : mode == Broadcast::Row ? b[k % cols] : b[0];
    }
  }

  void eval_concat(Node& node) {
    if (node.parents.empty()) shape_error(node, "requires at least one operand");
    const std::size_t rows = parent_value(node, 0).rows();
    std::size_t width = 0;
    bool rank2 = false;
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      const Tensor& t = parent_value(node, p);
      if (t.rows() != rows || t.rank() > 2) shape_error(node, "requires equal row counts");
      width += t.cols();
      rank2 = rank2 || t.rank() == 2;
    }
    node.value = rank2 ? Tensor({rows, width}) : Tensor({width});
    std::size_t offset = 0;
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      const Tensor& t = parent_value(node, p);
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy(t.row(r).begin(), t.row(r).end(),
                  node.value.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
      }
      offset += t.cols();
    }
  }

  void eval_group_norm(Node& node) {
    const Tensor& a = parent_value(node, 0);
    const std::size_t groups = node.size0;
    const std::size_t cols = a.cols();
    if (groups == 0 || cols % groups != 0) {
      shape_error(node, std::to_string(groups) + " groups do not divide the feature width");
    }
    const std::size_t width = cols / groups;
    const double eps = node.real0;
    node.value = Tensor(a.shape());
    // cache: per (row, group) the inverse std and whether the floor was hit.
    node.cache.assign(a.rows() * groups * 2, 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const auto x = a.row(r);
      auto y = node.value.row(r);
      for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t base = g * width;
        double mean = 0.0;
        for (std::size_t j = 0; j < width; ++j) mean += x[base + j];
        mean /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
          const double c = x[base + j] - mean;
          var += c * c;
        }
        var /= static_cast<double>(width);
        const bool floored = var <= eps;
        const double inv_std = 1.0 / std::sqrt(floored ? eps : var);
        for (std::size_t j = 0; j < width; ++j) y[base + j] = (x[base + j] - mean) * inv_std;
        node.cache[(r * groups + g) * 2] = inv_std;
        node.cache[(r * groups + g) * 2 + 1] = floored ? 1.0 : 0.0;
      }
    }
  }

  void eval_cosine(Node& node) {
    const Tensor& a = parent_value(node, 0);
    const Tensor& b = parent_value(node, 1);
    if (a.shape() != b.shape()) shape_error(node, "requires equal shapes");
    const double eps = node.real0;
    node.value = Tensor({a.rows(), 1});
    node.cache.assign(a.rows() * 3, 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const double na = l2_norm(a.row(r));
      const double nb = l2_norm(b.row(r));
      const double d = dot(a.row(r), b.row(r));
      node.value[r] = d / std::max(na * nb, eps);
      node.cache[r * 3] = na;
      node.cache[r * 3 + 1] = nb;
      node.cache[r * 3 + 2] = d;
    }
  }

  Tensor& grad_slot(std::uint32_t parent) {
    Tensor& g = grads_[parent];
    if (g.empty()) g = Tensor(value(NodeId{parent}).shape(), 0.0);
    return g;
  }

  void propagate(std::uint32_t i) {
    const Node& node = nodes_[i];
    const Tensor& dy = grads_[i];
    switch (node.kind) {
      case OpKind::Input:
      case OpKind::Parameter:
      case OpKind::Constant:
        return;
      case OpKind::MatMul: {
        const auto d = matmul_dims(node);
        const Tensor& a = parent_value(node, 0);
        const Tensor& b = parent_value(node, 1);
        const auto g = detail::as_matrix(dy, d.m, d.n);
        {
          auto ga = detail::as_matrix(grad_slot(node.parents[0]), d.m, d.k);
          ga += detail::product(g, detail::as_matrix(b, d.k, d.n).transpose());
        }
        {
          auto gb = detail::as_matrix(grad_slot(node.parents[1]), d.k, d.n);
          gb += detail::product(detail::as_matrix(a, d.m, d.k).transpose(), g);
        }
        return;
      }
      case OpKind::Add: {
        const Broadcast mode = add_mode(node);
        Tensor& ga = grad_slot(node.parents[0]);
        for (std::size_t k = 0; k < dy.size(); ++k) ga[k] += dy[k];
        Tensor& gb = grad_slot(node.parents[1]);
        const std::size_t cols = dy.cols();
        for (std::size_t k = 0; k < dy.size(); ++k) {
          gb[mode == Broadcast::None ? k : mode == Broadcast::Row ? k % cols : 0] += dy[k];
        }
        return;
      }
      case OpKind::Sub: {
        Tensor& ga = grad_slot(node.parents[0]);
        for (std::size_t k = 0; k < dy.size(); ++k) ga[k] += dy[k];
        Tensor& gb = grad_slot(node.parents[1]);
        for (std::size_t k = 0; k < dy.size(); ++k) gb[k] -= dy[k];
        return;
      }
      case OpKind::Scale: {
        Tensor& ga = grad_slot(node.parents[0]);
        for (std::size_t k = 0; k < dy.size(); ++k) ga[k] += dy[k] * node.real0;
        return;
      }
      case OpKind::Concat: {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < node.parents.size(); ++p) {
          Tensor& gp = grad_slot(node.parents[p]);
          const std::size_t width = gp.cols();
          for (std::size_t r = 0; r < gp.rows(); ++r) {
            auto src = dy.row(r);
            auto dst = gp.row(r);
            for (std::size_t j = 0; j < width; ++j) dst[j] += src[offset + j];
          }
          offset += width;
        }
        return;
      }
      case OpKind::Slice: {
        Tensor& ga = grad_slot(node.parents[0]);
        const std::size_t width = node.size1 - node.size0;
        for (std::size_t r = 0; r < dy.rows(); ++r) {
          auto src = dy.row(r);
          auto dst = ga.row(r);
          for (std::size_t j = 0; j < width; ++j) dst[node.size0 + j] += src[j];
        }
        return;
      }
      case OpKind::LeakyRelu: {
        const Tensor& x = parent_value(node, 0);
        Tensor& ga = grad_slot(node.parents[0]);
        for (std::size_t k = 0; k < dy.size(); ++k) {
          ga[k] += x[k] >= 0.0 ? dy[k] : dy[k] * node.real0;
        }
        return;
      }
      case OpKind::Relu: {
        const Tensor& x = parent_value(node, 0);
        Tensor& ga = grad_slot(node.parents[0]);
        for (std::size_t k = 0; k < dy.size(); ++k) ga[k] += x[k] > 0.0 ? dy[k] : 0.0;
        return;
      }
      case OpKind::GroupNorm: {
        const Tensor& y = node.value;
        Tensor& ga = grad_slot(node.parents[0]);
        const std::size_t groups = node.size0;
        const std::size_t width = y.cols() / groups;
        const double n = static_cast<double>(width);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const auto yr = y.row(r);
          const auto gr = dy.row(r);
          auto out = ga.row(r);
          for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t base = g * width;
            const double inv_std = node.cache[(r * groups + g) * 2];
            const bool floored = node.cache[(r * groups + g) * 2 + 1] != 0.0;
            double mean_g = 0.0;
            double mean_gy = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
              mean_g += gr[base + j];
              mean_gy += gr[base + j] * yr[base + j];
            }
            mean_g /= n;
            mean_gy /= n;
            if (floored) mean_gy = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
              out[base + j] += inv_std * (gr[base + j] - mean_g - yr[base + j] * mean_gy);
            }
          }
        }
        return;
      }
      case OpKind::AffineModulate: {
        const Tensor& x = parent_value(node, 0);
        const Tensor& sc = parent_value(node, 1);
        Tensor& gx = grad_slot(node.parents[0]);
        for (std::size_t k = 0; k < dy.size(); ++k) gx[k] += dy[k] * (1.0 + sc[k]);
        Tensor& gs = grad_slot(node.parents[1]);
        for (std::size_t k = 0; k < dy.size(); ++k) gs[k] += dy[k] * x[k];
        Tensor& gh = grad_slot(node.parents[2]);
        for (std::size_t k = 0; k < dy.size(); ++k) gh[k] += dy[k];
        return;
      }
      case OpKind::RowL2Norm: {
        const Tensor& a = parent_value(node, 0);
        Tensor& ga = grad_slot(node.parents[0]);
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const double norm = node.value[r];
          if (norm == 0.0) continue;
          const auto ar = a.row(r);
          auto out = ga.row(r);
          for (std::size_t j = 0; j < ar.size(); ++j) out[j] += dy[r] * ar[j] / norm;
        }
        return;
      }
      case OpKind::RowCosine: {
        const Tensor& a = parent_value(node, 0);
        const Tensor& b = parent_value(node, 1);
        Tensor& ga = grad_slot(node.parents[0]);
        Tensor& gb = grad_slot(node.parents[1]);
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const double na = node.cache[r * 3];
          const double nb = node.cache[r * 3 + 1];
          if (na * nb <= node.real0) continue;
          const double c = node.value[r];
          const double inv = 1.0 / (na * nb);
          const auto ar = a.row(r);
          const auto br = b.row(r);
          auto oa = ga.row(r);
          auto ob = gb.row(r);
          for (std::size_t j = 0; j < ar.size(); ++j) {
            oa[j] += dy[r] * (br[j] * inv - c * ar[j] / (na * na));
            ob[j] += dy[r] * (ar[j] * inv - c * br[j] / (nb * nb));
          }
        }
        return;
      }
      case OpKind::Mean: {
        Tensor& ga = grad_slot(node.parents[0]);
        const double w = dy[0] / static_cast<double>(ga.size());
        for (double& v : ga.data()) v += w;
        return;
      }
      case OpKind::MeanAbs: {
        const Tensor& a = parent_value(node, 0);
        Tensor& ga = grad_slot(node.parents[0]);
        const double w = dy[0] / static_cast<double>(a.size());
        for (std::size_t k = 0; k < a.size(); ++k) {
          ga[k] += a[k] > 0.0 ? w : a[k] < 0.0 ? -w : 0.0;
        }
        return;
      }
      case OpKind::MeanSquare: {
        const Tensor& a = parent_value(node, 0);
        Tensor& ga = grad_slot(node.parents[0]);
        const double w = 2.0 * dy[0] / static_cast<double>(a.size());
        for (std::size_t k = 0; k < a.size(); ++k) ga[k] += w * a[k];
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<bool> active_;
  std::vector<Tensor> grads_;
  const ParameterSet* bound_params_ = nullptr;
  NodeId forward_root_{};
  bool forward_done_ = false;
};

}  // namespace deltaedit::ad
