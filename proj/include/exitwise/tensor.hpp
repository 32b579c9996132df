// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace exitwise {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// One value in the define-by-run graph. Leaves (inputs, parameters) have
/// no backward rule; every op result records its parents and a rule that
/// reads `grad` and accumulates into the parents' grads.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<NodePtr<T>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  /// Grad storage, zero-filled on first use.
  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share the underlying node; use
/// `clone()` for an independent value.
template <typename T>
class BasicTensor {
 public:
  BasicTensor();
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit BasicTensor(NodePtr<T> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Direct write access; bypasses the graph (used by optimizers and loaders).
  std::span<T> mutable_data() { return node_->data; }
  T item() const;

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Independent leaf copy of the value (no graph, no grad).
  BasicTensor clone() const;

  const NodePtr<T>& node() const { return node_; }
  bool same_node(const BasicTensor& other) const { return node_ == other.node_; }

 private:
  NodePtr<T> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Nodes reachable from a root, in topological order (inputs before users).
template <typename T>
struct Tape {
  std::vector<NodePtr<T>> order;

  static Tape record(const BasicTensor<T>& root);
};

/// Reverse-mode sweep from a scalar loss. Leaf grads accumulate across
/// calls until `zero_grad`; the graph above the leaves is released.
template <typename T>
void backward(const BasicTensor<T>& loss);

namespace detail {

/// Wraps freshly computed data in a node. The backward rule and parents are
/// attached only when grad mode is on and some parent requires grad.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* op, std::vector<NodePtr<T>> parents,
                           std::function<void(Node<T>&)> backward_rule);

}  // namespace detail
}  // namespace exitwise
