// SPDX-License-Identifier: Apache-2.0
// Asymmetric masked autoencoder: small encoder over visible patches, wider
// decoder over the full grid.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spirl/mae/patches.hpp"
#include "spirl/tensor/params.hpp"
#include "spirl/tensor/snapshot.hpp"
#include "spirl/transformer/layer.hpp"

namespace spirl::mae {

struct MAEConfig {
  FrameSpec frame;
  std::size_t enc_dim = 64;
  std::size_t enc_depth = 3;
  std::size_t enc_heads = 4;
  std::size_t dec_dim = 128;
  std::size_t dec_depth = 3;
  std::size_t dec_heads = 8;
  double mask_ratio = 0.75;
  std::size_t mlp_ratio = 4;

  // 96x96 frames, 8x8 patches, encoder (64, 3, 4), decoder (128, 3, 8).
  static MAEConfig published();
  void validate() const;
  bool operator==(const MAEConfig&) const = default;
};

template <class T>
struct MAEParams {
  MAEConfig config;

  ad::Tensor<T> patch_w, patch_b;
  ad::Tensor<T> cls_token;
  std::vector<transformer::LayerParams<T>> encoder;
  ad::Tensor<T> enc_norm_gamma, enc_norm_beta;

  ad::Tensor<T> dec_embed_w, dec_embed_b;
  ad::Tensor<T> mask_token;
  std::vector<transformer::LayerParams<T>> decoder;
  ad::Tensor<T> dec_norm_gamma, dec_norm_beta;
  ad::Tensor<T> head_w, head_b;

  // Fixed positional tables [P*P, width].
  ad::Tensor<T> pe_enc, pe_dec;

  // Per-channel pixel statistics of the pre-training data, used only to map
  // normalized predictions back to pixels for rendering.
  std::vector<double> channel_mean, channel_std;

  static MAEParams init(const MAEConfig& config, Rng& rng, double init_std = 0.02);

  ad::ParamList<T> encoder_params() const;  // patch embed, blocks, final norm
  ad::ParamList<T> decoder_params() const;  // embed, blocks, norm, head
  ad::ParamList<T> token_params() const;    // [cls], [mask]
  ad::ParamList<T> all_params() const;

  std::vector<ad::SnapshotRecord> to_records() const;
  // Loads weights (and pixel statistics when present) from records.
  void load_records(const std::vector<ad::SnapshotRecord>& records);
};

template <class T>
MAEParams<T> load_mae(const std::string& path, const MAEConfig& config);

// Encoder outputs at visible positions (the [cls] output is dropped).
template <class T>
struct Encoded {
  ad::Tensor<T> tokens;  // [B, Vmax, enc_dim]; rows past visible[b].size() are padding
  std::vector<std::vector<std::size_t>> visible;
};

struct ForwardOptions {
  // B * queries_per_item raster ids; when set only these positions are
  // predicted and the last decoder layer computes just those rows.
  std::span<const std::size_t> query_positions{};
  std::size_t queries_per_item = 0;
};

// patches: [B, N, patch_dim] pixel values in [0, 1].
template <class T>
Encoded<T> encode(const MAEParams<T>& params, const ad::Tensor<T>& patches,
                  const std::vector<std::vector<std::size_t>>& visible);

template <class T>
ad::Tensor<T> decode(const MAEParams<T>& params, const Encoded<T>& encoded,
                     const ForwardOptions& options = {});

// Runs the decoder stack on ready-made decoder-width tokens [B, N, dec_dim].
template <class T>
ad::Tensor<T> decode_tokens(const MAEParams<T>& params, const ad::Tensor<T>& tokens,
                            const ForwardOptions& options = {});

// Predicted normalized patches [B, N, patch_dim] (or [B, m, patch_dim]).
template <class T>
ad::Tensor<T> mae_forward(const MAEParams<T>& params, const ad::Tensor<T>& patches,
                          const std::vector<std::vector<std::size_t>>& visible,
                          const ForwardOptions& options = {});

// Mean over frames of the mean over masked patches of the per-patch MSE.
// targets: normalized patches [B, N, patch_dim].
template <class T>
ad::Tensor<T> mae_loss(const ad::Tensor<T>& predictions, const ad::Tensor<T>& targets,
                       const std::vector<std::vector<std::size_t>>& masked);

// Predicts patch `center` from its grid neighbours only. Returns the
// normalized-space prediction of length patch_dim.
template <class T>
std::vector<T> reconstruct_from_surroundings(const MAEParams<T>& params,
                                             std::span<const T> frame_patches, GridPos center);

// All P*P surroundings-only predictions of one frame, [N * patch_dim].
template <class T>
std::vector<T> surroundings_predictions(const MAEParams<T>& params,
                                        std::span<const T> frame_patches,
                                        std::size_t chunk = 0);

// Encoder outputs for a fully visible frame, [N, enc_dim] in raster order.
template <class T>
std::vector<T> patch_embeddings(const MAEParams<T>& params, std::span<const T> frame_patches);

enum class ProbeMode { pe_plus_mask, pe_only, mask_only };

ProbeMode parse_probe_mode(const std::string& name);
std::string to_string(ProbeMode mode);

// Decoder output for tokens built from [mask] and/or positional tables
// alone, mapped to pixels with the stored channel statistics.
template <class T>
std::vector<std::uint8_t> decoder_probe(const MAEParams<T>& params, ProbeMode mode);

// Maps normalized patches [N * patch_dim] to 8-bit pixels through the
// per-channel statistics.
template <class T>
std::vector<std::uint8_t> render_normalized(const MAEParams<T>& params, std::span<const T> patches);

}  // namespace spirl::mae
