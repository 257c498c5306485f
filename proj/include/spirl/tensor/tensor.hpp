// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace spirl::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `grad` of this node and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

std::uint64_t next_node_id();

}  // namespace detail

// Graph recording is on by default; a NoGradGuard turns it off for the
// current thread until destroyed.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor with an optional reverse-mode graph.
///
/// Copies are shallow: two Tensor handles may refer to the same node, which
/// is how parameters are shared between a model and its optimizer. Leaf
/// tensors created with `parameter()` accumulate gradients across backward
/// passes until `zero_grad()` is called.
template <class T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value);
  static Tensor parameter(Shape shape, std::vector<T> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Negative axes count from the end.
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t numel() const { return node_ ? node_->value.size() : 0; }

  std::span<const T> data() const;
  std::span<T> mutable_data();
  // Empty until a backward pass reaches this tensor.
  std::span<const T> grad() const;
  std::span<T> mutable_grad();

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  void zero_grad();

  T item() const;
  T at(std::initializer_list<std::size_t> index) const;
  bool all_finite() const;

  // Seeds d(this)/d(this) = 1 and propagates to every reachable tensor that
  // requires grad. Nodes are visited in reverse creation order, which is a
  // fixed topological order for a given graph.
  void backward() const;

  // Value copy with no graph history.
  Tensor detach() const;

  std::uint64_t id() const { return node_ ? node_->id : 0; }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node<T>> node);

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// Element-wise conversion between precisions; the result has no history.
template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(out));
}

}  // namespace spirl::ad
