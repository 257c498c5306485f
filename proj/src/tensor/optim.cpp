// SPDX-License-Identifier: Apache-2.0
#include "spirl/tensor/optim.hpp"

#include <cmath>

#include "spirl/common/error.hpp"

namespace spirl::ad {

template <class T>
AdamW<T>::AdamW(ParamList<T> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), T(0));
    v_.emplace_back(p.tensor.numel(), T(0));
  }
}

template <class T>
void AdamW<T>::step() {
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const T lr = static_cast<T>(config_.lr);
  const T eps = static_cast<T>(config_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor<T> p = params_[k].tensor;
    auto values = p.mutable_data();
    auto grads = p.grad();
    const T decay = params_[k].decay ? static_cast<T>(config_.weight_decay) : T(0);
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T g = grads.empty() ? T(0) : grads[i];
      m[i] = static_cast<T>(b1) * m[i] + static_cast<T>(1.0 - b1) * g;
      v[i] = static_cast<T>(b2) * v[i] + static_cast<T>(1.0 - b2) * g * g;
      const T m_hat = m[i] / static_cast<T>(c1);
      const T v_hat = v[i] / static_cast<T>(c2);
      values[i] -= lr * decay * values[i];
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <class T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <class T>
void AdamW<T>::restore(std::uint64_t step, std::vector<std::vector<T>> m,
                       std::vector<std::vector<T>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw FormatError("optimizer state does not match parameter list");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (m[k].size() != params_[k].tensor.numel() || v[k].size() != params_[k].tensor.numel()) {
      throw FormatError("optimizer moment size mismatch for " + params_[k].name);
    }
  }
  t_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

template <class T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
  double total = 0.0;
  for (const auto& p : params) {
    for (T g : p.tensor.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0.0) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto p : params) {
      auto tensor = p.tensor;
      if (tensor.grad().empty()) continue;
      for (T& g : tensor.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm(const ParamList<float>&, double);
template double clip_grad_norm(const ParamList<double>&, double);

}  // namespace spirl::ad
