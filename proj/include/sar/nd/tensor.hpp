// Copyright 2026 The sarkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SAR_ND_TENSOR_HPP
#define SAR_ND_TENSOR_HPP

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sar/error.hpp"

namespace sar::nd {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

enum class Mode { Train, Eval };

/// Graph vertex. Non-leaf nodes keep their inputs alive and a closure that
/// pushes this node's gradient into them; leaves have no closure.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Shared handle to a dense row-major tensor. Copies alias the same storage;
/// use clone() for a deep copy.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value.assign(nd::numel(shape), T(0));
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (values.size() != nd::numel(shape)) {
      fail(ErrorKind::ShapeMismatch, "tensor of shape " + to_string(shape) + " given " +
                                         std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static BasicTensor full(Shape shape, T fill, bool requires_grad = false) {
    BasicTensor t(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), fill);
    return t;
  }

  static BasicTensor scalar(T v, bool requires_grad = false) {
    return BasicTensor(Shape{}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  T item() const {
    if (numel() != 1) fail(ErrorKind::NotScalarLoss, "item() on " + to_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Deep copy of the values, detached from any graph.
  BasicTensor clone() const {
    return BasicTensor(node_->shape, node_->value, node_->requires_grad);
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  bool same_storage(const BasicTensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;

/// Named trainable (or frozen) tensor. `group` is the freeze unit.
template <class T>
struct Parameter {
  std::string name;
  std::string group;
  BasicTensor<T> tensor;
};

/// Builds an op output. The graph edge and closure are recorded only when
/// grad mode is on and some input requires a gradient.
template <class T, class Backward>
BasicTensor<T> make_result(Shape shape, std::vector<T> values,
                           std::initializer_list<const BasicTensor<T>*> inputs,
                           Backward&& backward) {
  BasicTensor<T> out(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto* in : inputs) any = any || (in->defined() && in->requires_grad());
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto* in : inputs) {
    if (in->defined()) node.inputs.push_back(in->node());
  }
  node.backward = std::forward<Backward>(backward);
  return out;
}

struct BackwardReport {
  /// Names of requires_grad parameters the loss does not depend on. Their
  /// gradients are left at zero.
  std::vector<std::string> disconnected;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are reset at the start of every sweep.
template <class T>
BackwardReport backward(const BasicTensor<T>& loss,
                        const std::vector<Parameter<T>>& parameters = {}) {
  if (loss.numel() != 1) {
    fail(ErrorKind::NotScalarLoss, "loss has shape " + to_string(loss.shape()));
  }
  using NodePtr = Node<T>*;
  std::vector<NodePtr> order;
  std::unordered_set<NodePtr> seen;
  if (loss.requires_grad()) {
    // Iterative post-order DFS.
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        NodePtr child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    for (NodePtr node : order) {
      if (!node->is_leaf()) node->grad.assign(node->value.size(), T(0));
    }
    loss.node()->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if (!(*it)->is_leaf()) (*it)->backward(**it);
    }
  }
  BackwardReport report;
  for (const auto& p : parameters) {
    if (!p.tensor.requires_grad()) continue;
    if (!seen.count(p.tensor.node().get())) {
      report.disconnected.push_back(p.name);
      p.tensor.node()->ensure_grad();
    }
  }
  return report;
}

}  // namespace sar::nd

#endif  // SAR_ND_TENSOR_HPP
