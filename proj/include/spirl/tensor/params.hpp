// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "spirl/common/rng.hpp"
#include "spirl/tensor/tensor.hpp"

namespace spirl::ad {

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;  // false for biases, norms and tokens
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

template <class T>
std::size_t count_scalars(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

template <class T>
Tensor<T> trunc_normal_param(Shape shape, double std, Rng& rng) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.truncated_normal(std));
  return Tensor<T>::parameter(std::move(shape), std::move(v));
}

template <class T>
Tensor<T> constant_param(Shape shape, T value) {
  return Tensor<T>::parameter(shape, std::vector<T>(numel(shape), value));
}

}  // namespace spirl::ad
