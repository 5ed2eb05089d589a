#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace vfx {

/// Raised when tensor shapes are incompatible for an operation.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a caller violates an operation's precondition.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a configuration cannot be satisfied.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims) : dims_(dims) {}
  explicit Shape(std::vector<int> dims) : dims_(std::move(dims)) {}

  int rank() const { return static_cast<int>(dims_.size()); }
  int operator[](int axis) const { return dims_.at(static_cast<size_t>(axis)); }
  const std::vector<int>& dims() const { return dims_; }

  Eigen::Index numel() const {
    Eigen::Index n = 1;
    for (int d : dims_) n *= d;
    return n;
  }

  bool operator==(const Shape& other) const = default;

  std::string str() const {
    std::string s = "[";
    for (size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

 private:
  std::vector<int> dims_;
};

template <typename Scalar>
using Buffer = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  Buffer<Scalar> value;
  Buffer<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  Buffer<Scalar>& grad_ref() {
    if (grad.size() != value.size()) grad = Buffer<Scalar>::Zero(value.size());
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor with define-by-run reverse-mode differentiation.
///
/// A Tensor is a cheap handle onto a shared node. Values are immutable once an
/// op has produced them; only leaves (parameters) are updated in place by
/// optimizers. Every op records its inputs and a backward rule when at least
/// one input requires a gradient, and `backward()` walks that record once.
template <typename Scalar>
class Tensor {
 public:
  using NodeType = detail::Node<Scalar>;
  using NodePtr = std::shared_ptr<NodeType>;
  using BackwardFn = std::function<void(NodeType&)>;

  Tensor() = default;

  Tensor(Shape shape, Buffer<Scalar> values, bool requires_grad = false)
      : node_(std::make_shared<NodeType>()) {
    if (values.size() != shape.numel()) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape.str());
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape.numel();
    return Tensor(std::move(shape), Buffer<Scalar>::Zero(n), requires_grad);
  }

  static Tensor full(Shape shape, Scalar v, bool requires_grad = false) {
    const auto n = shape.numel();
    return Tensor(std::move(shape), Buffer<Scalar>::Constant(n, v), requires_grad);
  }

  static Tensor scalar(Scalar v) { return full(Shape{1}, v); }

  static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false) {
    Buffer<Scalar> b(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (Scalar v : values) b[i++] = v;
    return Tensor(std::move(shape), std::move(b), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(int axis) const { return node_->shape[axis]; }
  int rank() const { return node_->shape.rank(); }
  Eigen::Index numel() const { return node_->value.size(); }

  const Buffer<Scalar>& value() const { return node_->value; }
  const Scalar* data() const { return node_->value.data(); }

  /// In-place access for leaves only (parameter updates, loaders).
  Buffer<Scalar>& mutable_value() {
    if (!node_->is_leaf()) throw ContractError("mutable_value on a non-leaf tensor");
    return node_->value;
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  const Buffer<Scalar>& grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient");
    return node_->grad;
  }
  Buffer<Scalar>& mutable_grad() { return node_->grad_ref(); }

  void zero_grad() {
    if (node_->requires_grad) node_->grad = Buffer<Scalar>::Zero(node_->value.size());
  }

  Scalar item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().str());
    return node_->value[0];
  }

  /// Same values, no history.
  Tensor detach() const { return Tensor(shape(), value(), false); }

  const NodePtr& node() const { return node_; }

  /// Records an op result. When any input requires grad, all inputs are kept
  /// as parents so backward rules can read their values.
  static Tensor make_op(Shape shape, Buffer<Scalar> values, std::vector<Tensor> inputs,
                        BackwardFn backward) {
    Tensor out(std::move(shape), std::move(values), false);
#ifndef NDEBUG
    if (!out.node_->value.allFinite()) throw ContractError("non-finite value produced by op");
#endif
    if (!detail::grad_mode_flag()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs) out.node_->parents.push_back(in.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires grad,
  /// then releases the recorded graph.
  void backward() const {
    if (numel() != 1) {
      throw ContractError("backward() requires a scalar loss, got shape " + shape().str());
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS over nodes that require grad.
    std::vector<NodeType*> order;
    std::unordered_set<NodeType*> visited;
    std::vector<std::pair<NodeType*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        NodeType* p = n->parents[next++].get();
        if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }

    node_->grad_ref().setConstant(Scalar(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      NodeType* n = *it;
      if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
    }
    for (NodeType* n : order) {
      if (!n->is_leaf()) {
        n->backward = nullptr;
        n->parents.clear();
        n->grad.resize(0);
        n->requires_grad = false;
      }
    }
  }

 private:
  NodePtr node_;
};

}  // namespace vfx
