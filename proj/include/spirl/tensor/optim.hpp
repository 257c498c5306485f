// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "spirl/tensor/params.hpp"

namespace spirl::ad {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// AdamW with bias-corrected moments and decoupled weight decay:
///   p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)
/// Parameters flagged `decay = false` skip the decay term.
template <class T>
class AdamW {
 public:
  AdamW(ParamList<T> params, AdamWConfig config);

  void step();
  void zero_grad();

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  std::uint64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return config_; }

  // Moment buffers, aligned with params(); exposed for checkpointing.
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void restore(std::uint64_t step, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v);

  const ParamList<T>& params() const { return params_; }

 private:
  ParamList<T> params_;
  AdamWConfig config_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::uint64_t t_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

// Scales all gradients so their joint L2 norm is at most max_norm; returns the
// norm before clipping.
template <class T>
double clip_grad_norm(const ParamList<T>& params, double max_norm);

}  // namespace spirl::ad
