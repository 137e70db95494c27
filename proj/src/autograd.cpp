#include "muviecast/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace muvie::ag {
namespace {
thread_local bool g_grad_enabled = true;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

double Var::item() const {
  if (numel() != 1)
    throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
  return value()[0];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (!g_grad_enabled) return Var(std::move(node));

  bool needs = false;
  for (const Var& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return Var(std::move(node));

  node->requires_grad = true;
  node->inputs.reserve(inputs.size());
  for (const Var& in : inputs) node->inputs.push_back(in.node());
  node->backward = std::move(backward);
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root.defined() || root.numel() != 1)
    throw std::logic_error("backward() needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; `order` ends up topologically sorted.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second)
        stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Interior gradients are only needed during the sweep.
  for (Node* node : order)
    if (node->backward) node->grad = Tensor();
}

}  // namespace muvie::ag
