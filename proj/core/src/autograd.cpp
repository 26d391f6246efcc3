// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include "moectc/autograd.hpp"

#include <unordered_set>

#include "moectc/errors.hpp"

namespace moectc {

Tensor& Node::grad_buffer() {
  if (grad.shape() != value().shape() || grad.size() != value().size()) grad = Tensor(value().shape(), 0.0);
  return grad;
}

double Var::item() const {
  if (!node_ || value().size() != 1) throw ConfigError("item() requires a single-element tensor");
  return value()[0];
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->owned = std::move(value);
  return Var(std::move(node));
}

Var param_var(Param& param) {
  auto node = std::make_shared<Node>();
  node->external = &param.value;
  node->param = &param;
  node->requires_grad = true;
  return Var(std::move(node));
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->owned = std::move(value);
  for (const auto& p : parents) {
    if (p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void backward(const Var& root, double seed) {
  if (!root || !root.requires_grad()) return;
  if (root.value().size() != 1) throw ConfigError("backward() root must be a scalar");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& node = **it;
    if (node.grad.size() == 0) continue;
    if (node.backward_fn) node.backward_fn(node);
    if (node.param != nullptr) node.param->grad.add_(node.grad);
  }
  // Intermediate grads are released so a second sweep over a shared
  // subgraph starts from zero.
  for (Node* node : order) node->grad = Tensor();
}

}  // namespace moectc
