// SPDX-License-Identifier: Apache-2.0
// Pre-LN Transformer layer over batched token matrices.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spirl/common/rng.hpp"
#include "spirl/tensor/params.hpp"
#include "spirl/tensor/tensor.hpp"

namespace spirl::transformer {

inline constexpr double kLayerNormEps = 1e-6;

struct LayerConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
};

// Fused layout: qkv_w is [d, 3d] with columns [Q | K | V]; head h of each
// block occupies columns [h * d_head, (h + 1) * d_head).
template <class T>
struct LayerParams {
  std::size_t heads = 1;
  ad::Tensor<T> ln1_gamma, ln1_beta;
  ad::Tensor<T> qkv_w, qkv_b;
  ad::Tensor<T> proj_w, proj_b;
  ad::Tensor<T> ln2_gamma, ln2_beta;
  ad::Tensor<T> fc1_w, fc1_b;
  ad::Tensor<T> fc2_w, fc2_b;

  // Linear weights ~ truncated normal(init_std), biases 0, LN (1, 0).
  static LayerParams init(const LayerConfig& config, Rng& rng, double init_std = 0.02);

  std::size_t dim() const { return qkv_w.dim(0); }
  std::size_t hidden() const { return fc1_w.dim(1); }
  void append_to(ad::ParamList<T>& out, const std::string& prefix) const;
};

template <class T>
struct LayerOptions {
  bool residual = true;
  // B * n flags; zero marks padded keys.
  std::span<const std::uint8_t> key_valid{};
  // When set, only these rows (B * queries_per_batch ids) are produced.
  std::span<const std::size_t> query_rows{};
  std::size_t queries_per_batch = 0;
  // Receives softmax weights [B, heads, m, n] when non-null.
  std::vector<T>* attention_probs = nullptr;
};

// x: [B, n, d] -> [B, m, d]. With residual on:
//   x' = x + MHSA(LN(x), LN(X));  z = x' + MLP(LN(x'))
// With residual off the two skip terms are dropped.
template <class T>
ad::Tensor<T> transformer_layer(const ad::Tensor<T>& x, const LayerParams<T>& params,
                                const LayerOptions<T>& options = {});

// Multi-head self-attention block alone (without LN or residual): softmax
// attention over LN-free inputs followed by the output projection.
template <class T>
ad::Tensor<T> mhsa_block(const ad::Tensor<T>& x, const LayerParams<T>& params,
                         const LayerOptions<T>& options = {});

}  // namespace spirl::transformer
