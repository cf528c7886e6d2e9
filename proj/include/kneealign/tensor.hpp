#pragma once

// Dense NCHW tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle onto a graph node. Operations that consume a
// tensor requiring gradients record their parents and a backward closure;
// backward() walks the recorded DAG once in reverse topological order. Leaf
// parameters accumulate gradients across backward calls until zero_grad().

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kneealign/error.hpp"

namespace ka {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

inline thread_local int no_grad_depth = 0;

inline bool& finite_check_flag() {
#ifdef NDEBUG
  static bool enabled = false;
#else
  static bool enabled = true;
#endif
  return enabled;
}

}  // namespace detail

/// Turns on the post-op NaN/Inf check. On by default in debug builds.
inline void set_finite_checks(bool enabled) { detail::finite_check_flag() = enabled; }
inline bool finite_checks_enabled() { return detail::finite_check_flag(); }

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_mode_enabled() { return detail::no_grad_depth == 0; }

template <class T>
class Tensor {
 public:
  using Node = detail::Node<T>;
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node>()) {
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
    if (values.size() != shape_numel(shape)) {
      throw Error(Errc::ShapeMismatch, "value count does not match shape " + shape_str(shape));
    }
    node_->value = std::move(values);
    node_->shape = std::move(shape);
  }

  /// A leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<T> values) {
    Tensor t(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  T item() const {
    if (numel() != 1) throw Error(Errc::ShapeMismatch, "item() on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  /// Empty until a backward pass has reached this tensor.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  /// Copy of the values with no graph history.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel()) throw Error(Errc::ShapeMismatch, "reshape " + shape_str(s));
    return Tensor(std::move(s), node_->value);
  }

  const char* op_name() const { return node_->op; }
  const std::shared_ptr<Node>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <class T>
void check_finite(const Node<T>& n) {
  if (!finite_checks_enabled()) return;
  for (T v : n.value) {
    if (!std::isfinite(v)) {
      throw Error(Errc::NonFiniteLoss, std::string("non-finite value produced by ") + n.op);
    }
  }
}

/// Builds the output node of an op, recording parents only when some parent
/// needs gradients and recording is enabled.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs && grad_mode_enabled()) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  check_finite(*node);
  return Tensor<T>::from_node(std::move(node));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Each reachable node's backward
/// closure runs exactly once, after all of its consumers.
template <class T>
void backward(const Tensor<T>& loss) {
  using Node = detail::Node<T>;
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(Errc::ShapeMismatch, "backward() needs a scalar loss");
  }
  if (!loss.requires_grad()) {
    throw Error(Errc::UnrecordedTensor, "loss was not produced by recorded operations");
  }

  enum class Mark { InProgress, Done };
  std::unordered_map<const Node*, Mark> marks;
  std::vector<Node*> order;
  // Iterative post-order DFS; an InProgress hit means a cycle.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  marks[loss.node().get()] = Mark::InProgress;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (!parent->requires_grad) continue;
      auto it = marks.find(parent);
      if (it == marks.end()) {
        marks[parent] = Mark::InProgress;
        stack.emplace_back(parent, 0);
      } else if (it->second == Mark::InProgress) {
        throw Error(Errc::GraphCycle, "cycle in recorded graph");
      }
    } else {
      marks[node] = Mark::Done;
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients restart from zero on every sweep; leaves accumulate.
  for (Node* node : order) {
    if (node->backward) node->grad.assign(node->value.size(), T(0));
  }
  Node* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
  }
}

}  // namespace ka
