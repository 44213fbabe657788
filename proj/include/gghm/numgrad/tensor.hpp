#pragma once

// Dense row-major tensors with a reverse-mode tape.
//
// Every op result remembers its inputs and a backward closure. Node creation
// order is recorded in a global sequence number, so the set of nodes reachable
// from a loss, replayed in decreasing sequence order, is exactly the reversed
// tape of the forward evaluation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gghm/errors.hpp"

namespace gghm::numgrad {

template <class T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline std::atomic<std::uint64_t>& sequence_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool& finite_check_flag() {
  thread_local bool enabled = false;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Makes every op on this thread verify its output is finite.
class FiniteCheckGuard {
 public:
  FiniteCheckGuard() : previous_(detail::finite_check_flag()) { detail::finite_check_flag() = true; }
  ~FiniteCheckGuard() { detail::finite_check_flag() = previous_; }
  FiniteCheckGuard(const FiniteCheckGuard&) = delete;
  FiniteCheckGuard& operator=(const FiniteCheckGuard&) = delete;

 private:
  bool previous_;
};

template <Real T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  T* grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T{0});
    return grad.data();
  }
};

template <Real T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor from_data(Shape shape, std::vector<T> data) {
    if (numgrad::numel(shape) != data.size()) {
      throw DimensionError("tensor data of length " + std::to_string(data.size()) +
                           " does not fill shape " + to_string(shape));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->seq = detail::sequence_counter().fetch_add(1, std::memory_order_relaxed);
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T{0}); }

  static Tensor full(Shape shape, T v) {
    const auto n = numgrad::numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, v));
  }

  static Tensor scalar(T v) { return from_data({}, {v}); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Direct writes are meant for leaves (parameters, inputs) between steps.
  std::span<T> mutable_data() { return node_->value; }

  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return {node_->grad_buffer(), node_->value.size()}; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
  }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  const char* op() const { return node_->op; }
  const NodePtr& node() const { return node_; }

  void zero_grad() { node_->grad.clear(); }

  /// Fresh leaf holding a copy of the values, detached from any tape.
  Tensor detach() const { return from_data(shape(), node_->value); }

  /// Reverse sweep from a scalar. Gradients accumulate into every reachable
  /// node that requires grad.
  void backward() const {
    if (numel() != 1) throw DimensionError("backward() needs a scalar, got " + to_string(shape()));
    if (!node_->requires_grad) return;

    std::vector<Node<T>*> order;
    std::vector<Node<T>*> stack{node_.get()};
    std::unordered_set<const Node<T>*> seen{node_.get()};
    while (!stack.empty()) {
      Node<T>* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (const auto& in : n->inputs) {
        if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
      }
    }
    std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

    node_->grad_buffer()[0] += T{1};
    for (Node<T>* n : order) {
      if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
    }
  }

 private:
  NodePtr node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Builds an op result and, when recording, hooks it into the tape.
template <Real T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op, std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
  if (detail::finite_check_flag()) {
    for (const T v : value) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
  }
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), std::move(value));
  out.node()->op = op;
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node()->requires_grad = true;
  out.node()->inputs.reserve(inputs.size());
  for (auto& in : inputs) out.node()->inputs.push_back(in.node());
  out.node()->backward = std::move(backward);
  return out;
}

}  // namespace gghm::numgrad
