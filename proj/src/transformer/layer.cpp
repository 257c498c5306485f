// SPDX-License-Identifier: Apache-2.0
#include "spirl/transformer/layer.hpp"

#include "spirl/common/error.hpp"
#include "spirl/tensor/ops.hpp"

namespace spirl::transformer {

using ad::Tensor;

template <class T>
LayerParams<T> LayerParams<T>::init(const LayerConfig& config, Rng& rng, double init_std) {
  const std::size_t d = config.dim;
  if (config.heads == 0 || d % config.heads != 0) {
    throw InvalidArgument("model width " + std::to_string(d) + " not divisible by " +
                          std::to_string(config.heads) + " heads");
  }
  const std::size_t hid = d * config.mlp_ratio;
  LayerParams p;
  p.heads = config.heads;
  p.ln1_gamma = ad::constant_param<T>({d}, T(1));
  p.ln1_beta = ad::constant_param<T>({d}, T(0));
  p.qkv_w = ad::trunc_normal_param<T>({d, 3 * d}, init_std, rng);
  p.qkv_b = ad::constant_param<T>({3 * d}, T(0));
  p.proj_w = ad::trunc_normal_param<T>({d, d}, init_std, rng);
  p.proj_b = ad::constant_param<T>({d}, T(0));
  p.ln2_gamma = ad::constant_param<T>({d}, T(1));
  p.ln2_beta = ad::constant_param<T>({d}, T(0));
  p.fc1_w = ad::trunc_normal_param<T>({d, hid}, init_std, rng);
  p.fc1_b = ad::constant_param<T>({hid}, T(0));
  p.fc2_w = ad::trunc_normal_param<T>({hid, d}, init_std, rng);
  p.fc2_b = ad::constant_param<T>({d}, T(0));
  return p;
}

template <class T>
void LayerParams<T>::append_to(ad::ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "norm1.weight", ln1_gamma, false});
  out.push_back({prefix + "norm1.bias", ln1_beta, false});
  out.push_back({prefix + "attn.qkv.weight", qkv_w, true});
  out.push_back({prefix + "attn.qkv.bias", qkv_b, false});
  out.push_back({prefix + "attn.proj.weight", proj_w, true});
  out.push_back({prefix + "attn.proj.bias", proj_b, false});
  out.push_back({prefix + "norm2.weight", ln2_gamma, false});
  out.push_back({prefix + "norm2.bias", ln2_beta, false});
  out.push_back({prefix + "mlp.fc1.weight", fc1_w, true});
  out.push_back({prefix + "mlp.fc1.bias", fc1_b, false});
  out.push_back({prefix + "mlp.fc2.weight", fc2_w, true});
  out.push_back({prefix + "mlp.fc2.bias", fc2_b, false});
}

namespace {

template <class T>
Tensor<T> as_batched(const Tensor<T>& x, const LayerParams<T>& params) {
  if (x.rank() == 2) return ad::reshape(x, {1, x.dim(0), x.dim(1)});
  if (x.rank() != 3) throw ShapeError("transformer layer expects [B, n, d], got " + ad::to_string(x.shape()));
  if (x.dim(2) != params.dim()) {
    throw ShapeError("token width " + std::to_string(x.dim(2)) + " does not match layer width " +
                     std::to_string(params.dim()));
  }
  if (x.dim(1) == 0) throw ShapeError("transformer layer needs at least one token");
  return x;
}

template <class T>
Tensor<T> unbatch_like(const Tensor<T>& y, const Tensor<T>& original) {
  if (original.rank() == 2) return ad::reshape(y, {y.dim(1), y.dim(2)});
  return y;
}

template <class T>
Tensor<T> attend(const Tensor<T>& h, const LayerParams<T>& params, const LayerOptions<T>& options) {
  ad::AttentionOptions ao;
  ao.heads = params.heads;
  ao.key_valid = options.key_valid;
  ao.query_rows = options.query_rows;
  ao.queries_per_batch = options.queries_per_batch;
  auto qkv = ad::linear(h, params.qkv_w, params.qkv_b);
  auto heads = ad::self_attention(qkv, ao, options.attention_probs);
  return ad::linear(heads, params.proj_w, params.proj_b);
}

}  // namespace

template <class T>
Tensor<T> mhsa_block(const Tensor<T>& x, const LayerParams<T>& params,
                     const LayerOptions<T>& options) {
  auto xb = as_batched(x, params);
  return unbatch_like(attend(xb, params, options), x);
}

template <class T>
Tensor<T> transformer_layer(const Tensor<T>& x, const LayerParams<T>& params,
                            const LayerOptions<T>& options) {
  auto xb = as_batched(x, params);
  const T eps = static_cast<T>(kLayerNormEps);
  auto h = ad::layer_norm(xb, params.ln1_gamma, params.ln1_beta, eps);
  auto a = attend(h, params, options);
  Tensor<T> x1 = a;
  if (options.residual) {
    auto skip = options.query_rows.empty()
                    ? xb
                    : ad::gather_rows(xb, options.query_rows, options.queries_per_batch);
    x1 = ad::add(skip, a);
  }
  auto m = ad::layer_norm(x1, params.ln2_gamma, params.ln2_beta, eps);
  m = ad::linear(ad::gelu(ad::linear(m, params.fc1_w, params.fc1_b)), params.fc2_w, params.fc2_b);
  auto z = options.residual ? ad::add(x1, m) : m;
  return unbatch_like(z, x);
}

template struct LayerParams<float>;
template struct LayerParams<double>;
template Tensor<float> transformer_layer(const Tensor<float>&, const LayerParams<float>&,
                                         const LayerOptions<float>&);
template Tensor<double> transformer_layer(const Tensor<double>&, const LayerParams<double>&,
                                          const LayerOptions<double>&);
template Tensor<float> mhsa_block(const Tensor<float>&, const LayerParams<float>&,
                                  const LayerOptions<float>&);
template Tensor<double> mhsa_block(const Tensor<double>&, const LayerParams<double>&,
                                   const LayerOptions<double>&);

}  // namespace spirl::transformer
