// SPDX-License-Identifier: Apache-2.0
// Per-token attention written directly over vectors. Slow; used for
// inspection and as a cross-check of the fused batched kernels.
#pragma once

#include <cstddef>
#include <vector>

#include "spirl/transformer/layer.hpp"

namespace spirl::transformer::ref {

using Vec = std::vector<double>;

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  static Mat identity(std::size_t n);
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  Vec row(std::size_t r) const;
};

struct HeadWeights {
  Mat wq, wk, wv;  // d x d_head
  Vec bq, bk, bv;  // d_head, may be empty
};

struct AttentionWeights {
  std::vector<HeadWeights> heads;
  Mat wo;  // (k * d_head) x d
  Vec bo;  // d, may be empty
};

// softmax(q K^T / sqrt(d_head)) V. Throws InvalidArgument when K is empty.
Vec attention(const Vec& q, const Mat& keys, const Mat& values);

// Attention(x_i W^Q, X W^K, X W^V) for one head.
Vec sdpa(const Vec& x_i, const Mat& x, const HeadWeights& head);

// Concatenated heads projected by W^O.
Vec mhsa(const Vec& x_i, const Mat& x, const AttentionWeights& weights);

// Splits the fused qkv / proj parameters of a layer into per-head matrices.
AttentionWeights attention_weights(const LayerParams<double>& params);

}  // namespace spirl::transformer::ref
