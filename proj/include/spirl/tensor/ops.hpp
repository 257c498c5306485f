// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "spirl/tensor/tensor.hpp"

namespace spirl::ad {

// y = x W + bias over the last axis of x. x: [..., a], W: [a, b], bias: [b]
// or undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// a + b. b's shape must equal a's shape or a trailing suffix of it (broadcast
// over the leading axes).
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

// Element-wise product with the same suffix broadcast as add().
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <class T>
Tensor<T> gelu(const Tensor<T>& x);

template <class T>
Tensor<T> relu(const Tensor<T>& x);

// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gamma + beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps);

// Max-subtracted softmax along `axis` (negative counts from the end).
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::ptrdiff_t axis = -1);

// Mean of squared differences; scalar result.
template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> sum(const Tensor<T>& x);

template <class T>
Tensor<T> mean(const Tensor<T>& x);

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::ptrdiff_t axis);

// Half-open range [begin, end) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::ptrdiff_t axis, std::size_t begin, std::size_t end);

// x: [B, n, d]; index holds B * m row ids in [0, n). Result [B, m, d] with
// out[b, r] = x[b, index[b * m + r]]. Repeated ids accumulate in backward.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index, std::size_t m);

// Stacks `count` copies of x along a new leading axis.
template <class T>
Tensor<T> repeat_batch(const Tensor<T>& x, std::size_t count);

// x: [B, A], index: B entries in [0, A). Result [B].
template <class T>
Tensor<T> pick(const Tensor<T>& x, std::span<const std::size_t> index);

// x: [B, n, d]; keep: B * n flags. Mean over kept rows per batch entry; a
// batch entry with no kept rows yields zeros.
template <class T>
Tensor<T> masked_mean_rows(const Tensor<T>& x, std::span<const std::uint8_t> keep);

struct AttentionOptions {
  std::size_t heads = 1;
  // B * n flags; 0 excludes the key from every softmax. Empty = all valid.
  std::span<const std::uint8_t> key_valid{};
  // B * m query row ids; empty = every row is a query.
  std::span<const std::size_t> query_rows{};
  std::size_t queries_per_batch = 0;
};

// Fused multi-head scaled dot-product self-attention.
// qkv: [B, n, 3d] laid out as [Q | K | V], each split into `heads` column
// blocks of width d / heads. Output: [B, m, d] (m = n without query_rows),
// the concatenated per-head outputs before the output projection.
// If `probs` is non-null it receives the post-softmax weights [B, heads, m, n].
template <class T>
Tensor<T> self_attention(const Tensor<T>& qkv, const AttentionOptions& options,
                         std::vector<T>* probs = nullptr);

}  // namespace spirl::ad
