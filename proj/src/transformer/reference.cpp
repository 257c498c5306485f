// SPDX-License-Identifier: Apache-2.0
#include "spirl/transformer/reference.hpp"

#include <algorithm>
#include <cmath>

#include "spirl/common/error.hpp"

namespace spirl::transformer::ref {

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vec Mat::row(std::size_t r) const {
  return Vec(data.begin() + static_cast<std::ptrdiff_t>(r * cols),
             data.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
}

namespace {

Vec project(const Vec& x, const Mat& w, const Vec& bias) {
  if (x.size() != w.rows) {
    throw ShapeError("vector of width " + std::to_string(x.size()) + " against " +
                     std::to_string(w.rows) + "-row projection");
  }
  Vec out(w.cols, 0.0);
  for (std::size_t c = 0; c < w.cols; ++c) {
    double s = bias.empty() ? 0.0 : bias[c];
    for (std::size_t r = 0; r < w.rows; ++r) s += x[r] * w(r, c);
    out[c] = s;
  }
  return out;
}

Mat project_rows(const Mat& x, const Mat& w, const Vec& bias) {
  Mat out(x.rows, w.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    Vec y = project(x.row(i), w, bias);
    std::copy(y.begin(), y.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * w.cols));
  }
  return out;
}

}  // namespace

Vec attention(const Vec& q, const Mat& keys, const Mat& values) {
  if (keys.rows == 0) throw InvalidArgument("attention over an empty key set");
  if (keys.cols != q.size() || values.rows != keys.rows) {
    throw ShapeError("attention operands disagree in shape");
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.size()));
  Vec logits(keys.rows);
  for (std::size_t j = 0; j < keys.rows; ++j) {
    double s = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) s += q[c] * keys(j, c);
    logits[j] = s * inv;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  Vec out(values.cols, 0.0);
  for (std::size_t j = 0; j < keys.rows; ++j) {
    const double w = logits[j] / z;
    for (std::size_t c = 0; c < values.cols; ++c) out[c] += w * values(j, c);
  }
  return out;
}

Vec sdpa(const Vec& x_i, const Mat& x, const HeadWeights& head) {
  return attention(project(x_i, head.wq, head.bq), project_rows(x, head.wk, head.bk),
                   project_rows(x, head.wv, head.bv));
}

Vec mhsa(const Vec& x_i, const Mat& x, const AttentionWeights& weights) {
  if (weights.heads.empty()) throw InvalidArgument("mhsa needs at least one head");
  Vec cat;
  for (const auto& h : weights.heads) {
    Vec o = sdpa(x_i, x, h);
    cat.insert(cat.end(), o.begin(), o.end());
  }
  return project(cat, weights.wo, weights.bo);
}

AttentionWeights attention_weights(const LayerParams<double>& params) {
  const std::size_t d = params.dim();
  const std::size_t k = params.heads;
  const std::size_t dh = d / k;
  const auto w = params.qkv_w.data();
  const auto b = params.qkv_b.data();
  AttentionWeights out;
  for (std::size_t h = 0; h < k; ++h) {
    HeadWeights hw{Mat(d, dh), Mat(d, dh), Mat(d, dh), Vec(dh), Vec(dh), Vec(dh)};
    Mat* mats[3] = {&hw.wq, &hw.wk, &hw.wv};
    Vec* biases[3] = {&hw.bq, &hw.bk, &hw.bv};
    for (std::size_t part = 0; part < 3; ++part) {
      const std::size_t col0 = part * d + h * dh;
      for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < dh; ++c) (*mats[part])(r, c) = w[r * 3 * d + col0 + c];
      }
      for (std::size_t c = 0; c < dh; ++c) (*biases[part])[c] = b[col0 + c];
    }
    out.heads.push_back(std::move(hw));
  }
  out.wo = Mat(d, d);
  std::copy(params.proj_w.data().begin(), params.proj_w.data().end(), out.wo.data.begin());
  out.bo.assign(params.proj_b.data().begin(), params.proj_b.data().end());
  return out;
}

}  // namespace spirl::transformer::ref
