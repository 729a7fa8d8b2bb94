#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace acdr {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline bool &grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

} // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

//! Disables graph recording for the lifetime of the guard (inference,
//! validation passes).
class NoGradGuard {
public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

template <class T> struct Node {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad; // empty == absent
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(const Node &)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  std::vector<T> &ensure_grad() {
    if (grad.empty())
      grad.assign(values.size(), T(0));
    return grad;
  }
};

//! Shared handle to a node of the reverse-mode graph. Copies alias the same
//! storage.
template <class T> class Tensor {
public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (numel(shape) != values.size())
      throw std::invalid_argument("tensor: shape " + to_string(shape) +
                                  " does not match " +
                                  std::to_string(values.size()) + " values");
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape &shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->values.size(); }

  const std::vector<T> &values() const { return node_->values; }
  //! Mutable access for optimizers and data loading; never call while the
  //! tensor is part of a graph that still has to be differentiated.
  std::vector<T> &mutable_values() { return node_->values; }

  T item() const {
    if (node_->values.size() != 1)
      throw std::invalid_argument("item: tensor of shape " +
                                  to_string(shape()) + " is not a scalar");
    return node_->values[0];
  }

  T operator[](std::size_t i) const { return node_->values[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<T> &grad() const { return node_->grad; }
  std::vector<T> &mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  //! Same values, no history.
  Tensor detach() const { return Tensor(shape(), values(), false); }

  const std::shared_ptr<Node<T>> &node() const { return node_; }

  //! Builds the output of a differentiable op. `backward` is recorded only
  //! when grad mode is on and some input requires a gradient.
  static Tensor
  from_op(Shape shape, std::vector<T> values,
          std::vector<Tensor> inputs,
          std::function<void(const Node<T> &)> backward) {
    Tensor out(std::move(shape), std::move(values), false);
    if (!grad_enabled())
      return out;
    bool any = false;
    for (const auto &in : inputs)
      any = any || in.requires_grad();
    if (!any)
      return out;
    out.node_->requires_grad = true;
    for (auto &in : inputs)
      out.node_->parents.push_back(in.node_);
    out.node_->backward_fn = std::move(backward);
    return out;
  }

private:
  std::shared_ptr<Node<T>> node_;
};

//! Topologically ordered list of nodes reachable from `root` that take part
//! in differentiation; producers come before consumers.
template <class T>
std::vector<Node<T> *> topological_order(const std::shared_ptr<Node<T>> &root) {
  std::vector<Node<T> *> order;
  std::unordered_set<Node<T> *> visited;
  // Iterative post-order DFS; graphs from long evolutions get deep.
  std::vector<std::pair<Node<T> *, std::size_t>> stack;
  if (!root->requires_grad)
    return order;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T> *parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

//! Reverse-mode accumulation from a scalar loss. Leaf gradients accumulate
//! across calls; intermediate gradients are recomputed each call.
template <class T> void backward(const Tensor<T> &loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                to_string(loss.shape()));
  if (!loss.requires_grad())
    return;
  const auto order = topological_order(loss.node());
  for (Node<T> *node : order)
    if (!node->is_leaf())
      node->grad.assign(node->values.size(), T(0));
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T> *node = *it;
    if (!node->is_leaf())
      node->backward_fn(*node);
  }
  for (Node<T> *node : order)
    if (!node->is_leaf())
      node->grad.clear();
}

} // namespace acdr
