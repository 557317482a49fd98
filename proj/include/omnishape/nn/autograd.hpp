#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "omnishape/nn/tensor.hpp"

namespace omnishape::nn {

// Reverse-mode automatic differentiation over whole tensors.
//
// Every op records its inputs and a closure that pushes the output gradient back into
// them. Parameters are long-lived leaf nodes; graphs built during a forward pass are
// released when the last Var referencing them goes away.

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  // Accumulated gradient; zero-shaped tensor if nothing has flowed here yet.
  const Tensor& grad() const { return node_->grad; }
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Builds an op node. `backward` receives the output node (with its grad filled in).
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Back-propagates from a single-element loss. Gradients accumulate into every node that
// requires them. Throws UsageError for non-scalar losses and DivergenceError for a
// non-finite loss value.
void backward(const Var& loss);

}  // namespace omnishape::nn
