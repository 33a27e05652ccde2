#pragma once

#include <cassert>
#include <cmath>
#include <concepts>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "savipp/common.hpp"

namespace savipp::ndgrad {

// One node of the reverse-mode graph. Nodes are created by forward primitives
// and chained through shared ownership; the graph for a loss is whatever is
// reachable from the loss node. Values are immutable once a node is built.
template <std::floating_point T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated by backward(), same extent as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Reads this->grad and accumulates into parents' grad buffers.
  std::function<void(Node<T>&)> backprop;
};

template <std::floating_point T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (numel(shape) != static_cast<std::int64_t>(data.size()))
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> d(static_cast<std::size_t>(numel(shape)), T(0));
    return leaf(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(Shape shape, T v) {
    std::vector<T> d(static_cast<std::size_t>(numel(shape)), v);
    return leaf(std::move(shape), std::move(d), false);
  }

  static Tensor scalar(T v) { return leaf({1}, {v}, false); }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  std::int64_t dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(n_->value.size()); }
  bool requires_grad() const { return n_->requires_grad; }

  const std::vector<T>& value() const { return n_->value; }
  const std::vector<T>& grad() const {
    if (n_->grad.size() != n_->value.size())
      throw ContractError("gradient not populated; call backward first");
    return n_->grad;
  }
  bool has_grad() const { return n_->grad.size() == n_->value.size(); }

  T item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return n_->value[0];
  }

  std::shared_ptr<Node<T>> node() const { return n_; }

  static Tensor from_node(std::shared_ptr<Node<T>> n) { return Tensor(std::move(n)); }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}
  std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <std::floating_point T>
inline void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
  assert(dst.size() == src.size());
  T* __restrict d = dst.data();
  const T* __restrict s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

#ifndef NDEBUG
template <std::floating_point T>
inline void assert_finite(const std::vector<T>& v) {
  for (const T x : v) assert(std::isfinite(static_cast<double>(x)) && "non-finite forward value");
}
#else
template <std::floating_point T>
inline void assert_finite(const std::vector<T>&) {}
#endif

}  // namespace detail

// Factory used by every primitive: builds the output node, wires parents, and
// keeps requires_grad propagation in one place.
template <std::floating_point T, typename BackFn>
Tensor<T> make_op(Shape shape, std::vector<T> value,
                  std::vector<std::shared_ptr<Node<T>>> parents, BackFn&& back) {
  detail::assert_finite(value);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    // Inference-only graphs keep no parent links, so intermediates free as
    // soon as their handles drop.
    n->parents = std::move(parents);
    n->backprop = std::forward<BackFn>(back);
  }
  return Tensor<T>::from_node(std::move(n));
}

template <std::floating_point T>
inline void ensure_grad(Node<T>& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T(0));
}

// Reverse-mode sweep. Requires a scalar loss. Gradients of every
// requires_grad tensor reachable from the loss are (re)computed from zero;
// multiple uses of a tensor inside the graph accumulate additively.
template <std::floating_point T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw ContractError("loss does not depend on any requires_grad tensor");

  // Iterative DFS post-order = reverse topological order when walked back.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  struct Frame {
    Node<T>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<T>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) n->grad.assign(n->value.size(), T(0));
  loss.node()->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace savipp::ndgrad
