// SPDX-License-Identifier: Apache-2.0
#include "spirl/tensor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "spirl/common/error.hpp"

namespace spirl::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_node_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : Tensor(shape, std::vector<T>(ad::numel(shape), fill)) {}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
  if (values.size() != ad::numel(shape)) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + to_string(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->id = detail::next_node_id();
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <class T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <class T>
const Shape& Tensor<T>::shape() const {
  static const Shape empty;
  return node_ ? node_->shape : empty;
}

template <class T>
std::size_t Tensor<T>::dim(std::ptrdiff_t axis) const {
  const auto r = static_cast<std::ptrdiff_t>(rank());
  const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis out of range for shape " + to_string(shape()));
  return shape()[static_cast<std::size_t>(a)];
}

template <class T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) return {};
  return node_->value;
}

template <class T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) return {};
  return node_->value;
}

template <class T>
std::span<const T> Tensor<T>::grad() const {
  if (!node_) return {};
  return node_->grad;
}

template <class T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!node_) return {};
  node_->ensure_grad();
  return node_->grad;
}

template <class T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (node_) node_->requires_grad = on;
  return *this;
}

template <class T>
void Tensor<T>::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <class T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + to_string(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range for " + to_string(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

template <class T>
bool Tensor<T>::all_finite() const {
  for (T v : data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <class T>
void Tensor<T>::backward() const {
  if (!node_) throw ShapeError("backward on undefined tensor");
  if (node_->value.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(node_->shape));
  }
  if (!node_->requires_grad) return;

  std::vector<detail::Node<T>*> order;
  std::unordered_set<const detail::Node<T>*> seen;
  std::vector<detail::Node<T>*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    detail::Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->id > b->id; });

  // Intermediate gradients are rebuilt from scratch on every pass; leaves keep
  // accumulating.
  for (auto* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), T(0));
  }
  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto* n : order) {
    if (n->backward) n->backward(*n);
  }
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->value);
}

template <class T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<detail::Node<T>> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace spirl::ad
