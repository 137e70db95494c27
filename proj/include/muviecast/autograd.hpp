#pragma once

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// A Var is a handle to a graph node. Ops build nodes only when at least one
// input requires a gradient and recording is enabled; everything else is a
// constant, so frozen networks cost nothing extra on the backward pass.

#include <functional>
#include <memory>
#include <vector>

#include "muviecast/tensor.hpp"

namespace muvie::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Tensor value;
  Tensor grad;  // lazily allocated, same shape as value
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  BackwardFn backward;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor::zeros_like(value);
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var parameter(Tensor value);

  bool defined() const { return node_ != nullptr; }
  explicit operator bool() const { return defined(); }

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  std::size_t numel() const { return node_->value.numel(); }
  double item() const;

  Var detach() const { return constant(value()); }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

bool grad_enabled();

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Creates the result of an op. `backward` receives the result node and must
// accumulate into the grad buffers of the inputs that require gradients.
Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward);

// Accumulates d(root)/d(leaf) into every reachable leaf that requires a
// gradient. `root` must hold a single element.
void backward(const Var& root);

}  // namespace muvie::ag
