// SPDX-License-Identifier: Apache-2.0
// Set aggregation of salient-patch embeddings and the Q-value head.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spirl/saliency/saliency.hpp"
#include "spirl/tensor/params.hpp"
#include "spirl/transformer/layer.hpp"

namespace spirl::agent {

using ad::Tensor;
using saliency::PadMode;

enum class Pooling { cls, average };

Pooling parse_pooling(const std::string& name);
std::string to_string(Pooling pooling);

// B slots of a budgeted selection with the encoder embedding of each real
// slot. Pad slots carry zero embeddings.
struct SalientSet {
  std::vector<saliency::Slot> slots;
  std::vector<float> embeddings;  // slots.size() * embedding dim
  std::size_t real() const;
};

// One agent state: the last four salient sets, oldest first.
inline constexpr std::size_t kStackedFrames = 4;

struct AggregatorConfig {
  std::size_t in_dim = 64;
  std::size_t dim = 32;
  std::size_t heads = 8;
  std::size_t mlp_ratio = 4;
  bool residual = false;
  std::size_t grid = 12;  // P, for the positional table
  Pooling pooling = Pooling::cls;
  PadMode pad_mode = PadMode::zero_pad;
};

struct QConfig {
  std::size_t hidden = 256;
  std::size_t actions = 5;
};

template <class T>
struct Network {
  AggregatorConfig agg;
  QConfig q;

  Tensor<T> proj_w, proj_b;  // [in_dim, dim], [dim]
  Tensor<T> cls_token;       // [dim]
  Tensor<T> pad_token;       // [dim], used by trainable_pad
  transformer::LayerParams<T> layer;
  Tensor<T> pe;              // [P*P, dim], fixed
  Tensor<T> fc1_w, fc1_b;    // [4*dim, hidden]
  Tensor<T> fc2_w, fc2_b;    // [hidden, actions]

  static Network init(const AggregatorConfig& agg, const QConfig& q, Rng& rng);
  ad::ParamList<T> params() const;
  // Deep copy with fresh storage (target network).
  Network clone() const;
  void copy_values_from(const Network& other);
};

struct AggregateOutput {
  // Head-averaged attention of the [cls] query over the B slots, S * B
  // values; filled for cls pooling when requested.
  std::vector<double> cls_attention;
  // Sets with no real slot (average pooling yields a zero vector for them).
  std::vector<std::uint8_t> empty;
};

// o_t for each set: [S, dim]. All sets must have the same slot count.
template <class T>
Tensor<T> aggregate(const Network<T>& net, std::span<const SalientSet* const> sets,
                    AggregateOutput* extra = nullptr);

// MLP over concatenated aggregates [S, 4 * dim] -> [S, actions].
template <class T>
Tensor<T> q_head(const Network<T>& net, const Tensor<T>& stacked);

// Q values for states given as 4 * S sets (state-major, oldest first).
template <class T>
Tensor<T> q_values(const Network<T>& net, std::span<const SalientSet* const> state_sets);

// Stable 64-bit FNV-1a digest of parameter values (target-sync checks).
template <class T>
std::uint64_t param_hash(const ad::ParamList<T>& params);

}  // namespace spirl::agent
