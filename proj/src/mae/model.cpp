// SPDX-License-Identifier: Apache-2.0
#include "spirl/mae/model.hpp"

#include <algorithm>
#include <cmath>

#include "spirl/common/error.hpp"
#include "spirl/tensor/ops.hpp"

namespace spirl::mae {

using ad::Tensor;

MAEConfig MAEConfig::published() { return MAEConfig{}; }

void MAEConfig::validate() const {
  frame.validate();
  if (enc_dim % 4 != 0 || dec_dim % 4 != 0) throw InvalidArgument("MAE widths must be divisible by 4");
  if (enc_depth == 0 || dec_depth == 0) throw InvalidArgument("MAE depths must be positive");
  visible_count(frame.patches(), mask_ratio);
}

namespace {

template <class T>
Tensor<T> constant_table(const std::vector<double>& values, ad::Shape shape) {
  return Tensor<T>(std::move(shape), std::vector<T>(values.begin(), values.end()));
}

template <class T>
void append_layers(ad::ParamList<T>& out, const std::vector<transformer::LayerParams<T>>& layers,
                   const std::string& prefix) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].append_to(out, prefix + std::to_string(l) + ".");
  }
}

}  // namespace

template <class T>
MAEParams<T> MAEParams<T>::init(const MAEConfig& config, Rng& rng, double init_std) {
  config.validate();
  const std::size_t D = config.frame.patch_dim();
  const std::size_t N = config.frame.patches();
  const std::size_t de = config.enc_dim, dd = config.dec_dim;
  MAEParams m;
  m.config = config;
  m.patch_w = ad::trunc_normal_param<T>({D, de}, init_std, rng);
  m.patch_b = ad::constant_param<T>({de}, T(0));
  m.cls_token = ad::trunc_normal_param<T>({de}, init_std, rng);
  for (std::size_t l = 0; l < config.enc_depth; ++l) {
    m.encoder.push_back(transformer::LayerParams<T>::init(
        {de, config.enc_heads, config.mlp_ratio}, rng, init_std));
  }
  m.enc_norm_gamma = ad::constant_param<T>({de}, T(1));
  m.enc_norm_beta = ad::constant_param<T>({de}, T(0));
  m.dec_embed_w = ad::trunc_normal_param<T>({de, dd}, init_std, rng);
  m.dec_embed_b = ad::constant_param<T>({dd}, T(0));
  m.mask_token = ad::trunc_normal_param<T>({dd}, init_std, rng);
  for (std::size_t l = 0; l < config.dec_depth; ++l) {
    m.decoder.push_back(transformer::LayerParams<T>::init(
        {dd, config.dec_heads, config.mlp_ratio}, rng, init_std));
  }
  m.dec_norm_gamma = ad::constant_param<T>({dd}, T(1));
  m.dec_norm_beta = ad::constant_param<T>({dd}, T(0));
  m.head_w = ad::trunc_normal_param<T>({dd, D}, init_std, rng);
  m.head_b = ad::constant_param<T>({D}, T(0));
  const std::size_t P = config.frame.grid();
  m.pe_enc = constant_table<T>(sinusoidal_pe_2d(P, de), {N, de});
  m.pe_dec = constant_table<T>(sinusoidal_pe_2d(P, dd), {N, dd});
  m.channel_mean.assign(config.frame.c, 0.5);
  m.channel_std.assign(config.frame.c, 0.25);
  return m;
}

template <class T>
ad::ParamList<T> MAEParams<T>::encoder_params() const {
  ad::ParamList<T> out{{"encoder.patch_embed.weight", patch_w, true},
                       {"encoder.patch_embed.bias", patch_b, false}};
  append_layers(out, encoder, "encoder.blocks.");
  out.push_back({"encoder.norm.weight", enc_norm_gamma, false});
  out.push_back({"encoder.norm.bias", enc_norm_beta, false});
  return out;
}

template <class T>
ad::ParamList<T> MAEParams<T>::decoder_params() const {
  ad::ParamList<T> out{{"decoder.embed.weight", dec_embed_w, true},
                       {"decoder.embed.bias", dec_embed_b, false}};
  append_layers(out, decoder, "decoder.blocks.");
  out.push_back({"decoder.norm.weight", dec_norm_gamma, false});
  out.push_back({"decoder.norm.bias", dec_norm_beta, false});
  out.push_back({"decoder.pred.weight", head_w, true});
  out.push_back({"decoder.pred.bias", head_b, false});
  return out;
}

template <class T>
ad::ParamList<T> MAEParams<T>::token_params() const {
  return {{"encoder.cls_token", cls_token, false}, {"decoder.mask_token", mask_token, false}};
}

template <class T>
ad::ParamList<T> MAEParams<T>::all_params() const {
  auto out = encoder_params();
  auto dec = decoder_params();
  auto tok = token_params();
  out.insert(out.end(), dec.begin(), dec.end());
  out.insert(out.end(), tok.begin(), tok.end());
  return out;
}

template <class T>
std::vector<ad::SnapshotRecord> MAEParams<T>::to_records() const {
  auto records = ad::to_records(all_params());
  const std::size_t c = channel_mean.size();
  records.push_back({"data.channel_mean", {c}, std::vector<float>(channel_mean.begin(), channel_mean.end())});
  records.push_back({"data.channel_std", {c}, std::vector<float>(channel_std.begin(), channel_std.end())});
  return records;
}

template <class T>
void MAEParams<T>::load_records(const std::vector<ad::SnapshotRecord>& records) {
  ad::assign_from_records(all_params(), records);
  if (const auto* m = ad::find_record(records, "data.channel_mean")) {
    channel_mean.assign(m->data.begin(), m->data.end());
  }
  if (const auto* s = ad::find_record(records, "data.channel_std")) {
    channel_std.assign(s->data.begin(), s->data.end());
  }
}

template <class T>
MAEParams<T> load_mae(const std::string& path, const MAEConfig& config) {
  Rng rng(0);
  auto params = MAEParams<T>::init(config, rng);
  params.load_records(ad::load_snapshot(path));
  return params;
}

template <class T>
Encoded<T> encode(const MAEParams<T>& params, const Tensor<T>& patches,
                  const std::vector<std::vector<std::size_t>>& visible) {
  const auto& cfg = params.config;
  const std::size_t N = cfg.frame.patches(), D = cfg.frame.patch_dim(), de = cfg.enc_dim;
  if (patches.rank() != 3 || patches.dim(1) != N || patches.dim(2) != D) {
    throw ShapeError("MAE input must be [B, " + std::to_string(N) + ", " + std::to_string(D) +
                     "], got " + ad::to_string(patches.shape()));
  }
  const std::size_t B = patches.dim(0);
  if (visible.size() != B) throw ShapeError("one visible set per batch item required");
  std::size_t vmax = 1;
  for (const auto& v : visible) vmax = std::max(vmax, v.size());

  std::vector<std::size_t> index(B * vmax, 0);
  std::vector<std::uint8_t> key_valid(B * (vmax + 1), 0);
  std::vector<T> pe(B * vmax * de, T(0));
  const auto table = params.pe_enc.data();
  for (std::size_t b = 0; b < B; ++b) {
    key_valid[b * (vmax + 1)] = 1;  // [cls]
    for (std::size_t r = 0; r < visible[b].size(); ++r) {
      const std::size_t pos = visible[b][r];
      if (pos >= N) throw InvalidArgument("visible patch index out of range");
      index[b * vmax + r] = pos;
      key_valid[b * (vmax + 1) + 1 + r] = 1;
      std::copy(table.begin() + pos * de, table.begin() + (pos + 1) * de,
                pe.begin() + (b * vmax + r) * de);
    }
  }
  auto x = ad::linear(ad::gather_rows(patches, index, vmax), params.patch_w, params.patch_b);
  x = ad::add(x, Tensor<T>({B, vmax, de}, std::move(pe)));
  auto cls = ad::reshape(ad::repeat_batch(params.cls_token, B), {B, 1, de});
  auto h = ad::concat<T>({cls, x}, 1);
  transformer::LayerOptions<T> opt;
  opt.key_valid = key_valid;
  for (const auto& layer : params.encoder) h = transformer::transformer_layer(h, layer, opt);
  h = ad::layer_norm(h, params.enc_norm_gamma, params.enc_norm_beta,
                     static_cast<T>(transformer::kLayerNormEps));
  return {ad::slice(h, 1, 1, vmax + 1), visible};
}

template <class T>
Tensor<T> decode_tokens(const MAEParams<T>& params, const Tensor<T>& tokens,
                        const ForwardOptions& options) {
  Tensor<T> h = tokens;
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    transformer::LayerOptions<T> opt;
    if (l + 1 == params.decoder.size() && !options.query_positions.empty()) {
      opt.query_rows = options.query_positions;
      opt.queries_per_batch = options.queries_per_item;
    }
    h = transformer::transformer_layer(h, params.decoder[l], opt);
  }
  h = ad::layer_norm(h, params.dec_norm_gamma, params.dec_norm_beta,
                     static_cast<T>(transformer::kLayerNormEps));
  return ad::linear(h, params.head_w, params.head_b);
}

template <class T>
Tensor<T> decode(const MAEParams<T>& params, const Encoded<T>& encoded,
                 const ForwardOptions& options) {
  const std::size_t N = params.config.frame.patches(), dd = params.config.dec_dim;
  const std::size_t B = encoded.tokens.dim(0), vmax = encoded.tokens.dim(1);
  auto y = ad::linear(encoded.tokens, params.dec_embed_w, params.dec_embed_b);
  auto mask = ad::reshape(ad::repeat_batch(params.mask_token, B), {B, 1, dd});
  auto pool = ad::concat<T>({y, mask}, 1);
  std::vector<std::size_t> index(B * N, vmax);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t r = 0; r < encoded.visible[b].size(); ++r) {
      index[b * N + encoded.visible[b][r]] = r;
    }
  }
  auto tokens = ad::add(ad::gather_rows(pool, index, N), params.pe_dec);
  return decode_tokens(params, tokens, options);
}

template <class T>
Tensor<T> mae_forward(const MAEParams<T>& params, const Tensor<T>& patches,
                      const std::vector<std::vector<std::size_t>>& visible,
                      const ForwardOptions& options) {
  return decode(params, encode(params, patches, visible), options);
}

template <class T>
Tensor<T> mae_loss(const Tensor<T>& predictions, const Tensor<T>& targets,
                   const std::vector<std::vector<std::size_t>>& masked) {
  if (predictions.shape() != targets.shape() || predictions.rank() != 3) {
    throw ShapeError("prediction/target shapes differ: " + ad::to_string(predictions.shape()) +
                     " vs " + ad::to_string(targets.shape()));
  }
  const std::size_t B = predictions.dim(0), N = predictions.dim(1), D = predictions.dim(2);
  if (masked.size() != B) throw ShapeError("one masked set per batch item required");
  std::size_t mmax = 0;
  for (const auto& m : masked) {
    if (m.empty()) throw InvalidArgument("loss needs at least one masked patch per frame");
    mmax = std::max(mmax, m.size());
  }
  std::vector<std::size_t> index(B * mmax, 0);
  std::vector<T> weight(B * mmax * D, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    const T w = T(1) / static_cast<T>(masked[b].size() * D * B);
    for (std::size_t r = 0; r < masked[b].size(); ++r) {
      if (masked[b][r] >= N) throw InvalidArgument("masked patch index out of range");
      index[b * mmax + r] = masked[b][r];
      std::fill_n(weight.begin() + (b * mmax + r) * D, D, w);
    }
  }
  auto diff = ad::sub(ad::gather_rows(predictions, index, mmax), ad::gather_rows(targets, index, mmax));
  return ad::sum(ad::mul(ad::mul(diff, diff), Tensor<T>({B, mmax, D}, std::move(weight))));
}

template <class T>
std::vector<T> surroundings_predictions(const MAEParams<T>& params, std::span<const T> frame_patches,
                                        std::size_t chunk) {
  const auto& spec = params.config.frame;
  const std::size_t N = spec.patches(), D = spec.patch_dim(), P = spec.grid();
  if (frame_patches.size() != N * D) throw ShapeError("frame patch buffer has the wrong size");
  if (chunk == 0) chunk = N;
  ad::NoGradGuard no_grad;
  std::vector<T> out(N * D);
  for (std::size_t start = 0; start < N; start += chunk) {
    const std::size_t B = std::min(chunk, N - start);
    std::vector<T> batch(B * N * D);
    std::vector<std::vector<std::size_t>> visible(B);
    std::vector<std::size_t> query(B);
    for (std::size_t b = 0; b < B; ++b) {
      std::copy(frame_patches.begin(), frame_patches.end(), batch.begin() + b * N * D);
      const std::size_t pos = start + b;
      visible[b] = surroundings(P, {pos / P, pos % P});
      query[b] = pos;
    }
    ForwardOptions opt{query, 1};
    auto pred = mae_forward(params, Tensor<T>({B, N, D}, std::move(batch)), visible, opt);
    std::copy(pred.data().begin(), pred.data().end(), out.begin() + start * D);
  }
  return out;
}

template <class T>
std::vector<T> reconstruct_from_surroundings(const MAEParams<T>& params,
                                             std::span<const T> frame_patches, GridPos center) {
  const auto& spec = params.config.frame;
  const std::size_t N = spec.patches(), D = spec.patch_dim(), P = spec.grid();
  if (frame_patches.size() != N * D) throw ShapeError("frame patch buffer has the wrong size");
  const std::size_t pos = center.i * P + center.j;
  ad::NoGradGuard no_grad;
  std::vector<std::vector<std::size_t>> visible{surroundings(P, center)};
  auto pred = mae_forward(params, Tensor<T>({1, N, D}, std::vector<T>(frame_patches.begin(), frame_patches.end())),
                          visible);
  return std::vector<T>(pred.data().begin() + pos * D, pred.data().begin() + (pos + 1) * D);
}

template <class T>
std::vector<T> patch_embeddings(const MAEParams<T>& params, std::span<const T> frame_patches) {
  const auto& spec = params.config.frame;
  const std::size_t N = spec.patches(), D = spec.patch_dim();
  if (frame_patches.size() != N * D) throw ShapeError("frame patch buffer has the wrong size");
  ad::NoGradGuard no_grad;
  std::vector<std::vector<std::size_t>> visible(1);
  for (std::size_t i = 0; i < N; ++i) visible[0].push_back(i);
  auto enc = encode(params, Tensor<T>({1, N, D}, std::vector<T>(frame_patches.begin(), frame_patches.end())),
                    visible);
  return std::vector<T>(enc.tokens.data().begin(), enc.tokens.data().end());
}

ProbeMode parse_probe_mode(const std::string& name) {
  if (name == "pe_plus_mask") return ProbeMode::pe_plus_mask;
  if (name == "pe_only") return ProbeMode::pe_only;
  if (name == "mask_only") return ProbeMode::mask_only;
  throw InvalidArgument("unknown probe mode '" + name + "'");
}

std::string to_string(ProbeMode mode) {
  switch (mode) {
    case ProbeMode::pe_plus_mask: return "pe_plus_mask";
    case ProbeMode::pe_only: return "pe_only";
    case ProbeMode::mask_only: return "mask_only";
  }
  return "?";
}

template <class T>
std::vector<std::uint8_t> render_normalized(const MAEParams<T>& params, std::span<const T> patches) {
  const auto& spec = params.config.frame;
  if (patches.size() != spec.pixels()) throw ShapeError("patch buffer has the wrong size");
  auto pixels = unpatchify(patches, spec);
  std::vector<std::uint8_t> out(pixels.size());
  for (std::size_t k = 0; k < pixels.size(); ++k) {
    const std::size_t ch = k % spec.c;
    const double v = static_cast<double>(pixels[k]) * params.channel_std[ch] + params.channel_mean[ch];
    out[k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }
  return out;
}

template <class T>
std::vector<std::uint8_t> decoder_probe(const MAEParams<T>& params, ProbeMode mode) {
  const std::size_t N = params.config.frame.patches(), dd = params.config.dec_dim;
  ad::NoGradGuard no_grad;
  std::vector<T> tokens(N * dd, T(0));
  const auto mask = params.mask_token.data();
  const auto pe = params.pe_dec.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < dd; ++k) {
      T v = 0;
      if (mode != ProbeMode::mask_only) v += pe[n * dd + k];
      if (mode != ProbeMode::pe_only) v += mask[k];
      tokens[n * dd + k] = v;
    }
  }
  auto pred = decode_tokens(params, Tensor<T>({1, N, dd}, std::move(tokens)));
  return render_normalized<T>(params, pred.data());
}

#define SPIRL_INSTANTIATE_MAE(T)                                                               \
  template struct MAEParams<T>;                                                                \
  template MAEParams<T> load_mae<T>(const std::string&, const MAEConfig&);                     \
  template Encoded<T> encode(const MAEParams<T>&, const Tensor<T>&,                            \
                             const std::vector<std::vector<std::size_t>>&);                    \
  template Tensor<T> decode(const MAEParams<T>&, const Encoded<T>&, const ForwardOptions&);    \
  template Tensor<T> decode_tokens(const MAEParams<T>&, const Tensor<T>&, const ForwardOptions&); \
  template Tensor<T> mae_forward(const MAEParams<T>&, const Tensor<T>&,                        \
                                 const std::vector<std::vector<std::size_t>>&,                 \
                                 const ForwardOptions&);                                       \
  template Tensor<T> mae_loss(const Tensor<T>&, const Tensor<T>&,                              \
                              const std::vector<std::vector<std::size_t>>&);                   \
  template std::vector<T> surroundings_predictions(const MAEParams<T>&, std::span<const T>,    \
                                                   std::size_t);                               \
  template std::vector<T> reconstruct_from_surroundings(const MAEParams<T>&, std::span<const T>, \
                                                        GridPos);                              \
  template std::vector<T> patch_embeddings(const MAEParams<T>&, std::span<const T>);           \
  template std::vector<std::uint8_t> render_normalized(const MAEParams<T>&, std::span<const T>); \
  template std::vector<std::uint8_t> decoder_probe(const MAEParams<T>&, ProbeMode);

SPIRL_INSTANTIATE_MAE(float)
SPIRL_INSTANTIATE_MAE(double)

}  // namespace spirl::mae
