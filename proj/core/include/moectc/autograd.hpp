// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "moectc/tensor.hpp"

namespace moectc {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded value in a computation graph. Param leaves alias the
/// parameter storage instead of copying it.
struct Node {
  Tensor owned;
  const Tensor* external = nullptr;
  Param* param = nullptr;
  Tensor grad;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  const Tensor& value() const { return external != nullptr ? *external : owned; }
  /// Gradient buffer, allocated as zeros on first use.
  Tensor& grad_buffer();
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value(); }
  const Shape& shape() const { return node_->value().shape(); }
  std::int64_t dim(int axis) const { return node_->value().dim(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  double item() const;

  const NodePtr& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

Var constant(Tensor value);
/// Leaf for a parameter; backward() accumulates into param.grad.
Var param_var(Param& param);

/// Records an op. `backward` reads node.grad and adds into the grad buffers
/// of the parents that require gradients. It is dropped when no parent does.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Reverse sweep from a scalar root seeded with d(root) = seed.
void backward(const Var& root, double seed = 1.0);

}  // namespace moectc
