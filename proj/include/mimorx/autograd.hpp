// Reverse-mode differentiation over Tensor<T>.
//
// A forward pass builds a DAG of Node objects held by shared_ptr; Var is a
// cheap handle. backward() seeds the (scalar) root with gradient 1, walks
// the graph once in reverse topological order and lets each node's backprop
// closure accumulate into its parents' gradient buffers. Gradients always
// have the same shape (and realness) as the value they belong to: for a
// complex tensor the gradient holds d(loss)/d(re) and d(loss)/d(im) in its
// two planes.
//
// Values are immutable once a node is built; forward evaluation is pure and
// may run concurrently on separate graphs. A backward pass owns its graph's
// gradient buffers exclusively.

#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "mimorx/tensor.hpp"

namespace mimorx {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool needs_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Reads this->grad, accumulates into parents. May be empty for leaves.
  std::function<void(Node<T>&)> backprop;

  void accum_grad(const Tensor<T>& g) {
    if (!needs_grad) return;
    if (grad.re.empty()) grad = Tensor<T>::like(value);
    for (size_t i = 0; i < g.re.size(); ++i) grad.re[i] += g.re[i];
    for (size_t i = 0; i < g.im.size(); ++i) grad.im[i] += g.im[i];
  }

  // Ensures the grad buffer exists (used by ops that write grads in place).
  Tensor<T>& grad_buffer() {
    if (grad.re.empty()) grad = Tensor<T>::like(value);
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<T> value, bool needs_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->needs_grad = needs_grad;
    return Var(std::move(n));
  }

  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  const Tensor<T>& value() const { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool needs_grad() const { return node_ && node_->needs_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  std::shared_ptr<Node<T>>& node() { return node_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

// Iterative post-order DFS; returns nodes in topological order (parents
// before children is NOT guaranteed globally, but the reverse of this order
// visits every node before its parents, which is what backward needs).
template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx].get();
      ++idx;
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace detail

// Runs reverse-mode accumulation from a scalar root. Each node is visited
// exactly once; nodes with needs_grad == false are skipped entirely.
template <typename T>
void backward(const Var<T>& root) {
  Node<T>* r = root.node().get();
  if (r->value.numel() != 1 || r->value.is_complex())
    throw ShapeError("backward: root must be a real scalar");
  if (!r->needs_grad) return;
  auto order = detail::topo_order(r);
  r->grad_buffer().re[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop && !n->grad.re.empty()) n->backprop(*n);
  }
}

}  // namespace mimorx
