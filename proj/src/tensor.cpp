// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "exitwise/error.hpp"

namespace exitwise {

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
BasicTensor<T>::BasicTensor() : node_(std::make_shared<Node<T>>()) {
  node_->data.assign(1, T(0));
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  if (exitwise::numel(shape) != data.size())
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " + std::to_string(exitwise::numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = exitwise::numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = exitwise::numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(node_->shape, node_->data, false);
}

template <typename T>
Tape<T> Tape<T>::record(const BasicTensor<T>& root) {
  Tape tape;
  std::unordered_set<const Node<T>*> seen;
  // Iterative post-order DFS; a node is emitted after all of its parents.
  std::vector<std::pair<NodePtr<T>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (parent->requires_grad && seen.insert(parent.get()).second) stack.emplace_back(parent, 0);
    } else {
      tape.order.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  auto tape = Tape<T>::record(loss);
  for (auto& node : tape.order)
    if (node->backward) node->grad.assign(node->data.size(), T(0));
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    auto& node = **it;
    if (node.backward) node.backward(node);
  }
  for (auto& node : tape.order) {
    if (node->backward) {
      node->backward = nullptr;
      node->parents.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

namespace detail {

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* op, std::vector<NodePtr<T>> parents,
                           std::function<void(Node<T>&)> backward_rule) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (grad_enabled())
    for (auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_rule);
  }
  return BasicTensor<T>(std::move(node));
}

template BasicTensor<float> make_result<float>(Shape, std::vector<float>, const char*, std::vector<NodePtr<float>>,
                                               std::function<void(Node<float>&)>);
template BasicTensor<double> make_result<double>(Shape, std::vector<double>, const char*,
                                                 std::vector<NodePtr<double>>, std::function<void(Node<double>&)>);

}  // namespace detail

template class BasicTensor<float>;
template class BasicTensor<double>;
template struct Tape<float>;
template struct Tape<double>;
template void backward<float>(const BasicTensor<float>&);
template void backward<double>(const BasicTensor<double>&);

}  // namespace exitwise
