// SPDX-License-Identifier: Apache-2.0
#include "spirl/agent/network.hpp"

#include <cmath>
#include <cstring>

#include "spirl/common/error.hpp"
#include "spirl/mae/patches.hpp"
#include "spirl/tensor/ops.hpp"

namespace spirl::agent {

Pooling parse_pooling(const std::string& name) {
  if (name == "cls") return Pooling::cls;
  if (name == "average") return Pooling::average;
  throw InvalidArgument("unknown pooling: " + name);
}

std::string to_string(Pooling pooling) { return pooling == Pooling::cls ? "cls" : "average"; }

std::size_t SalientSet::real() const {
  std::size_t n = 0;
  for (const auto& s : slots) n += !s.pad;
  return n;
}

namespace {

template <class T>
Tensor<T> lecun_param(ad::Shape shape, Rng& rng) {
  return ad::trunc_normal_param<T>(shape, 1.0 / std::sqrt(static_cast<double>(shape[0])), rng);
}

template <class T>
Tensor<T> copy_param(const Tensor<T>& t) {
  return Tensor<T>::parameter(t.shape(), std::vector<T>(t.data().begin(), t.data().end()));
}

}  // namespace

template <class T>
Network<T> Network<T>::init(const AggregatorConfig& agg, const QConfig& q, Rng& rng) {
  if (agg.dim % agg.heads != 0 || agg.dim % 4 != 0) throw InvalidArgument("aggregator width must split into heads");
  if (q.actions == 0 || q.hidden == 0) throw InvalidArgument("q head needs actions and hidden units");
  Network n;
  n.agg = agg;
  n.q = q;
  n.proj_w = lecun_param<T>({agg.in_dim, agg.dim}, rng);
  n.proj_b = ad::constant_param<T>({agg.dim}, T(0));
  n.cls_token = ad::trunc_normal_param<T>({agg.dim}, 0.02, rng);
  n.pad_token = ad::trunc_normal_param<T>({agg.dim}, 0.02, rng);
  n.layer = transformer::LayerParams<T>::init({agg.dim, agg.heads, agg.mlp_ratio}, rng);
  auto table = mae::sinusoidal_pe_2d(agg.grid, agg.dim);
  n.pe = Tensor<T>({agg.grid * agg.grid, agg.dim}, std::vector<T>(table.begin(), table.end()));
  n.fc1_w = lecun_param<T>({kStackedFrames * agg.dim, q.hidden}, rng);
  n.fc1_b = ad::constant_param<T>({q.hidden}, T(0));
  n.fc2_w = lecun_param<T>({q.hidden, q.actions}, rng);
  n.fc2_b = ad::constant_param<T>({q.actions}, T(0));
  return n;
}

template <class T>
ad::ParamList<T> Network<T>::params() const {
  ad::ParamList<T> out;
  out.push_back({"agg.proj.weight", proj_w, true});
  out.push_back({"agg.proj.bias", proj_b, false});
  out.push_back({"agg.cls_token", cls_token, false});
  out.push_back({"agg.pad_token", pad_token, false});
  layer.append_to(out, "agg.block.");
  out.push_back({"q.fc1.weight", fc1_w, true});
  out.push_back({"q.fc1.bias", fc1_b, false});
  out.push_back({"q.fc2.weight", fc2_w, true});
  out.push_back({"q.fc2.bias", fc2_b, false});
  return out;
}

template <class T>
Network<T> Network<T>::clone() const {
  Network n = *this;
  n.proj_w = copy_param(proj_w);
  n.proj_b = copy_param(proj_b);
  n.cls_token = copy_param(cls_token);
  n.pad_token = copy_param(pad_token);
  auto& l = n.layer;
  for (auto* t : {&l.ln1_gamma, &l.ln1_beta, &l.qkv_w, &l.qkv_b, &l.proj_w, &l.proj_b, &l.ln2_gamma,
                  &l.ln2_beta, &l.fc1_w, &l.fc1_b, &l.fc2_w, &l.fc2_b}) {
    *t = copy_param(*t);
  }
  n.fc1_w = copy_param(fc1_w);
  n.fc1_b = copy_param(fc1_b);
  n.fc2_w = copy_param(fc2_w);
  n.fc2_b = copy_param(fc2_b);
  return n;
}

template <class T>
void Network<T>::copy_values_from(const Network& other) {
  auto dst = params();
  auto src = other.params();
  if (dst.size() != src.size()) throw ShapeError("network layouts differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].tensor.shape() != src[i].tensor.shape()) throw ShapeError("network layouts differ: " + dst[i].name);
    auto d = dst[i].tensor.mutable_data();
    auto s = src[i].tensor.data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

template <class T>
Tensor<T> aggregate(const Network<T>& net, std::span<const SalientSet* const> sets, AggregateOutput* extra) {
  const auto& cfg = net.agg;
  const std::size_t S = sets.size();
  if (S == 0) throw InvalidArgument("aggregate: no sets");
  const std::size_t B = sets[0]->slots.size();
  if (B == 0) throw InvalidArgument("aggregate: empty slot budget");
  const std::size_t d = cfg.dim, in = cfg.in_dim, n = B + 1;
  const std::size_t cells = cfg.grid * cfg.grid;

  std::vector<T> emb(S * B * in, T(0)), real(S * B * d, T(0)), pos(S * B * d, T(0)), pad(S * B * d, T(0));
  std::vector<std::uint8_t> key_valid(S * n, 1), keep(S * n, 0), empty(S, 0);
  const auto pe = net.pe.data();
  for (std::size_t s = 0; s < S; ++s) {
    const SalientSet& set = *sets[s];
    if (set.slots.size() != B || set.embeddings.size() != B * in) throw ShapeError("aggregate: inconsistent salient set");
    key_valid[s * n] = 0;  // [cls] is the query only
    std::size_t reals = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const auto& slot = set.slots[b];
      const std::size_t row = s * B + b;
      if (slot.pad) {
        if (cfg.pad_mode == PadMode::masked_attention) key_valid[s * n + 1 + b] = 0;
        if (cfg.pad_mode == PadMode::trainable_pad) std::fill_n(pad.begin() + row * d, d, T(1));
        continue;
      }
      if (slot.pos >= cells) throw ShapeError("aggregate: slot position outside the grid");
      ++reals;
      keep[s * n + 1 + b] = 1;
      for (std::size_t k = 0; k < in; ++k) emb[row * in + k] = static_cast<T>(set.embeddings[b * in + k]);
      for (std::size_t k = 0; k < d; ++k) {
        real[row * d + k] = T(1);
        pos[row * d + k] = pe[slot.pos * d + k];
      }
    }
    if (reals == 0) {
      empty[s] = 1;
      // Nothing to attend to under masking; let [cls] see itself.
      if (cfg.pad_mode == PadMode::masked_attention) key_valid[s * n] = 1;
    }
  }

  Tensor<T> e({S * B, in}, std::move(emb));
  auto tokens = ad::mul(ad::linear(e, net.proj_w, net.proj_b), Tensor<T>({S * B, d}, std::move(real)));
  tokens = ad::add(tokens, Tensor<T>({S * B, d}, std::move(pos)));
  if (cfg.pad_mode == PadMode::trainable_pad) {
    tokens = ad::add(tokens, ad::mul(Tensor<T>({S * B, d}, std::move(pad)), net.pad_token));
  }
  auto cls = ad::reshape(ad::repeat_batch(net.cls_token, S), {S, 1, d});
  auto x = ad::concat<T>({cls, ad::reshape(tokens, {S, B, d})}, 1);

  transformer::LayerOptions<T> opt;
  opt.residual = cfg.residual;
  opt.key_valid = key_valid;
  std::vector<std::size_t> query_rows;
  std::vector<T> probs;
  const bool want_attention = extra && cfg.pooling == Pooling::cls;
  if (want_attention) opt.attention_probs = &probs;

  Tensor<T> out;
  if (cfg.pooling == Pooling::cls) {
    query_rows.assign(S, 0);
    opt.query_rows = query_rows;
    opt.queries_per_batch = 1;
    out = ad::reshape(transformer::transformer_layer(x, net.layer, opt), {S, d});
  } else {
    out = ad::masked_mean_rows(transformer::transformer_layer(x, net.layer, opt), keep);
  }

  if (extra) {
    extra->empty = empty;
    extra->cls_attention.clear();
    if (want_attention) {
      // probs: [S, heads, 1, n]
      const std::size_t H = cfg.heads;
      extra->cls_attention.assign(S * B, 0.0);
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t h = 0; h < H; ++h) {
          for (std::size_t b = 0; b < B; ++b) {
            extra->cls_attention[s * B + b] += static_cast<double>(probs[(s * H + h) * n + 1 + b]) / H;
          }
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> q_head(const Network<T>& net, const Tensor<T>& stacked) {
  return ad::linear(ad::gelu(ad::linear(stacked, net.fc1_w, net.fc1_b)), net.fc2_w, net.fc2_b);
}

template <class T>
Tensor<T> q_values(const Network<T>& net, std::span<const SalientSet* const> state_sets) {
  if (state_sets.size() % kStackedFrames != 0) throw ShapeError("q_values: sets must come in groups of four");
  const std::size_t S = state_sets.size() / kStackedFrames;
  auto o = aggregate(net, state_sets);
  return q_head(net, ad::reshape(o, {S, kStackedFrames * net.agg.dim}));
}

template <class T>
std::uint64_t param_hash(const ad::ParamList<T>& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : params) {
    for (T v : p.tensor.data()) {
      unsigned char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

#define SPIRL_INSTANTIATE_NET(T)                                                                  \
  template struct Network<T>;                                                                     \
  template Tensor<T> aggregate(const Network<T>&, std::span<const SalientSet* const>, AggregateOutput*); \
  template Tensor<T> q_head(const Network<T>&, const Tensor<T>&);                                 \
  template Tensor<T> q_values(const Network<T>&, std::span<const SalientSet* const>);             \
  template std::uint64_t param_hash(const ad::ParamList<T>&);

SPIRL_INSTANTIATE_NET(float)
SPIRL_INSTANTIATE_NET(double)

}  // namespace spirl::agent
