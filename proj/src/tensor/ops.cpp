// SPDX-License-Identifier: Apache-2.0
#include "spirl/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "spirl/common/error.hpp"
#include "spirl/tensor/kernels.hpp"

namespace spirl::ad {
namespace {

template <class T>
using Node = detail::Node<T>;

template <class T>
using BackwardFn = std::function<void(Node<T>&)>;

template <class T>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                  BackwardFn<T> backward) {
  Tensor<T> out(std::move(shape), std::move(value));
  if (!GradMode::enabled()) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<T>& t) { return t.requires_grad(); });
  if (!any) return out;
  Node<T>& node = *out.node();
  node.requires_grad = true;
  for (const auto& in : inputs) node.parents.push_back(in.node());
  node.backward = std::move(backward);
  return out;
}

// Parent gradient buffer, or nullptr when that parent does not need one.
template <class T>
T* parent_grad(Node<T>& self, std::size_t i) {
  if (i >= self.parents.size() || !self.parents[i]) return nullptr;
  Node<T>& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

template <class T>
const T* parent_value(const Node<T>& self, std::size_t i) {
  return self.parents[i]->value.data();
}

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

void require_defined(bool ok, const char* op) {
  if (!ok) throw ShapeError(std::string(op) + ": undefined input tensor");
}

// Returns the inner (broadcast) size when b's shape is a suffix of a's.
std::size_t suffix_broadcast(const Shape& a, const Shape& b, const char* op) {
  bool ok = b.size() <= a.size();
  for (std::size_t i = 0; ok && i < b.size(); ++i) {
    ok = a[a.size() - b.size() + i] == b[i];
  }
  if (!ok) {
    throw ShapeError(std::string(op) + ": shape " + to_string(b) + " does not broadcast to " +
                     to_string(a));
  }
  return numel(b);
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                     to_string(b));
  }
}

}  // namespace

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_defined(x.defined() && weight.defined(), "linear");
  if (weight.rank() != 2 || x.rank() == 0 || x.dim(-1) != weight.dim(0)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight.shape()));
  }
  const std::size_t in = weight.dim(0);
  const std::size_t out_dim = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match output width " +
                     std::to_string(out_dim));
  }
  const std::size_t rows = x.numel() / in;
  std::vector<T> y(rows * out_dim);
  kernels::gemm(rows, in, out_dim, x.data().data(), weight.data().data(), y.data(), false);
  if (bias.defined()) {
    const T* bv = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      T* yr = y.data() + r * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) yr[j] += bv[j];
    }
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  const bool has_bias = bias.defined();
  auto backward = [rows, in, out_dim, has_bias](Node<T>& self) {
    const T* dy = self.grad.data();
    if (T* dx = parent_grad(self, 0)) {
      std::vector<T> wt(in * out_dim);
      kernels::transpose(in, out_dim, parent_value(self, 1), wt.data());
      kernels::gemm(rows, out_dim, in, dy, wt.data(), dx, true);
    }
    if (T* dw = parent_grad(self, 1)) {
      std::vector<T> xt(in * rows);
      kernels::transpose(rows, in, parent_value(self, 0), xt.data());
      kernels::gemm(in, rows, out_dim, xt.data(), dy, dw, true);
    }
    if (has_bias) {
      if (T* db = parent_grad(self, 2)) {
        for (std::size_t r = 0; r < rows; ++r) {
          const T* dyr = dy + r * out_dim;
          for (std::size_t j = 0; j < out_dim; ++j) db[j] += dyr[j];
        }
      }
    }
  };
  if (has_bias) return make_op<T>(std::move(shape), std::move(y), {x, weight, bias}, backward);
  return make_op<T>(std::move(shape), std::move(y), {x, weight}, backward);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a.defined() && b.defined(), "add");
  const std::size_t inner = suffix_broadcast(a.shape(), b.shape(), "add");
  const std::size_t n = a.numel();
  std::vector<T> y(a.data().begin(), a.data().end());
  const T* bv = b.data().data();
  for (std::size_t i = 0; i < n; ++i) y[i] += bv[i % inner];
  return make_op<T>(a.shape(), std::move(y), {a, b}, [n, inner](Node<T>& self) {
    const T* dy = self.grad.data();
    if (T* da = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
    }
    if (T* db = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) db[i % inner] += dy[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a.defined() && b.defined(), "sub");
  require_same(a.shape(), b.shape(), "sub");
  const std::size_t n = a.numel();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = a.data()[i] - b.data()[i];
  return make_op<T>(a.shape(), std::move(y), {a, b}, [n](Node<T>& self) {
    const T* dy = self.grad.data();
    if (T* da = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
    }
    if (T* db = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) db[i] -= dy[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a.defined() && b.defined(), "mul");
  const std::size_t inner = suffix_broadcast(a.shape(), b.shape(), "mul");
  const std::size_t n = a.numel();
  std::vector<T> y(n);
  const T* av = a.data().data();
  const T* bv = b.data().data();
  for (std::size_t i = 0; i < n; ++i) y[i] = av[i] * bv[i % inner];
  return make_op<T>(a.shape(), std::move(y), {a, b}, [n, inner](Node<T>& self) {
    const T* dy = self.grad.data();
    const T* av = parent_value(self, 0);
    const T* bv = parent_value(self, 1);
    if (T* da = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * bv[i % inner];
    }
    if (T* db = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) db[i % inner] += dy[i] * av[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  require_defined(a.defined(), "scale");
  const std::size_t n = a.numel();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = a.data()[i] * factor;
  return make_op<T>(a.shape(), std::move(y), {a}, [n, factor](Node<T>& self) {
    if (T* da = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) da[i] += self.grad[i] * factor;
    }
  });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  require_defined(x.defined(), "gelu");
  const std::size_t n = x.numel();
  const T inv_sqrt2 = T(0.70710678118654752440);
  std::vector<T> y(n);
  const T* xv = x.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
  }
  return make_op<T>(x.shape(), std::move(y), {x}, [n, inv_sqrt2](Node<T>& self) {
    T* dx = parent_grad(self, 0);
    if (!dx) return;
    const T* xv = parent_value(self, 0);
    const T inv_sqrt_2pi = T(0.39894228040143267794);
    for (std::size_t i = 0; i < n; ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      dx[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  require_defined(x.defined(), "relu");
  const std::size_t n = x.numel();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = std::max(x.data()[i], T(0));
  return make_op<T>(x.shape(), std::move(y), {x}, [n](Node<T>& self) {
    T* dx = parent_grad(self, 0);
    if (!dx) return;
    const T* xv = parent_value(self, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (xv[i] > T(0)) dx[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_defined(x.defined() && gamma.defined() && beta.defined(), "layer_norm");
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.dim(-1);
  if (d == 0 || gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: affine parameters must have shape [" + std::to_string(d) + "]");
  }
  const std::size_t rows = x.numel() / d;
  std::vector<T> y(x.numel());
  // Saved for backward: normalized input and reciprocal std per row.
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  const T* xv = x.data().data();
  const T* g = gamma.data().data();
  const T* bt = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      y[r * d + j] = h * g[j] + bt[j];
    }
  }
  return make_op<T>(x.shape(), std::move(y), {x, gamma, beta},
                    [rows, d, xhat, rstd](Node<T>& self) {
    const T* dy = self.grad.data();
    const T* g = parent_value(self, 1);
    T* dx = parent_grad(self, 0);
    T* dg = parent_grad(self, 1);
    T* db = parent_grad(self, 2);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dyr = dy + r * d;
      const T* hr = xhat->data() + r * d;
      if (dg) {
        for (std::size_t j = 0; j < d; ++j) dg[j] += dyr[j] * hr[j];
      }
      if (db) {
        for (std::size_t j = 0; j < d; ++j) db[j] += dyr[j];
      }
      if (dx) {
        T mean_dh = 0;
        T mean_dh_h = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const T dh = dyr[j] * g[j];
          mean_dh += dh;
          mean_dh_h += dh * hr[j];
        }
        mean_dh /= static_cast<T>(d);
        mean_dh_h /= static_cast<T>(d);
        const T rs = (*rstd)[r];
        T* dxr = dx + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          dxr[j] += rs * (dyr[j] * g[j] - mean_dh - hr[j] * mean_dh_h);
        }
      }
    }
  });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::ptrdiff_t axis) {
  require_defined(x.defined(), "softmax");
  const std::size_t ax = normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  const std::size_t len = s[ax];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t outer = len == 0 ? 0 : x.numel() / (len * inner);
  std::vector<T> y(x.numel());
  const T* xv = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
      T total = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const T e = std::exp(xv[base + k * inner] - mx);
        y[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) y[base + k * inner] /= total;
    }
  }
  return make_op<T>(s, std::move(y), {x}, [outer, len, inner](Node<T>& self) {
    T* dx = parent_grad(self, 0);
    if (!dx) return;
    const T* yv = self.value.data();
    const T* dy = self.grad.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = 0;
        for (std::size_t k = 0; k < len; ++k) dot += yv[base + k * inner] * dy[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = base + k * inner;
          dx[i] += yv[i] * (dy[i] - dot);
        }
      }
    }
  });
}

template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a.defined() && b.defined(), "mse");
  require_same(a.shape(), b.shape(), "mse");
  const std::size_t n = a.numel();
  if (n == 0) throw ShapeError("mse: empty input");
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T diff = a.data()[i] - b.data()[i];
    acc += diff * diff;
  }
  return make_op<T>(Shape{}, {acc / static_cast<T>(n)}, {a, b}, [n](Node<T>& self) {
    const T g = self.grad[0] * T(2) / static_cast<T>(n);
    const T* av = parent_value(self, 0);
    const T* bv = parent_value(self, 1);
    if (T* da = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) da[i] += g * (av[i] - bv[i]);
    }
    if (T* db = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) db[i] -= g * (av[i] - bv[i]);
    }
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  require_defined(x.defined(), "sum");
  const std::size_t n = x.numel();
  T acc = 0;
  for (T v : x.data()) acc += v;
  return make_op<T>(Shape{}, {acc}, {x}, [n](Node<T>& self) {
    if (T* dx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) dx[i] += self.grad[0];
    }
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty input");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require_defined(x.defined(), "reshape");
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  const std::size_t n = x.numel();
  std::vector<T> y(x.data().begin(), x.data().end());
  return make_op<T>(std::move(shape), std::move(y), {x}, [n](Node<T>& self) {
    if (T* dx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) dx[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts) require_defined(p.defined(), "concat");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::size_t> chunk;  // per-part contiguous chunk per outer index
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: " + to_string(s) + " incompatible with " + to_string(first) +
                       " along axis " + std::to_string(ax));
    }
    out_shape[ax] += s[ax];
    chunk.push_back(s[ax] * inner);
  }
  const std::size_t row = out_shape[ax] * inner;
  std::vector<T> y(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * chunk[k], src + (o + 1) * chunk[k], y.data() + o * row + offset);
    }
    offset += chunk[k];
  }
  Tensor<T> out(std::move(out_shape), std::move(y));
  const bool any =
      std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
  if (!GradMode::enabled() || !any) return out;
  Node<T>& node = *out.node();
  node.requires_grad = true;
  for (const auto& p : parts) node.parents.push_back(p.node());
  node.backward = [outer, row, chunk](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      if (T* dp = parent_grad(self, k)) {
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = self.grad.data() + o * row + off;
          T* dst = dp + o * chunk[k];
          for (std::size_t i = 0; i < chunk[k]; ++i) dst[i] += src[i];
        }
      }
      off += chunk[k];
    }
  };
  return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, std::ptrdiff_t axis, std::size_t begin, std::size_t end) {
  require_defined(x.defined(), "slice");
  const std::size_t ax = normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  if (begin > end || end > s[ax]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for axis of size " + std::to_string(s[ax]));
  }
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  const std::size_t src_row = s[ax] * inner;
  const std::size_t dst_row = (end - begin) * inner;
  const std::size_t start = begin * inner;
  Shape out_shape = s;
  out_shape[ax] = end - begin;
  std::vector<T> y(outer * dst_row);
  const T* xv = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(xv + o * src_row + start, xv + o * src_row + start + dst_row, y.data() + o * dst_row);
  }
  return make_op<T>(std::move(out_shape), std::move(y), {x},
                    [outer, src_row, dst_row, start](Node<T>& self) {
    T* dx = parent_grad(self, 0);
    if (!dx) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < dst_row; ++i) {
        dx[o * src_row + start + i] += self.grad[o * dst_row + i];
      }
    }
  });
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index, std::size_t m) {
  require_defined(x.defined(), "gather_rows");
  if (x.rank() != 3) throw ShapeError("gather_rows: expected [B, n, d], got " + to_string(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t n = x.dim(1);
  const std::size_t d = x.dim(2);
  if (index.size() != batch * m) {
    throw ShapeError("gather_rows: index length " + std::to_string(index.size()) + " != " +
                     std::to_string(batch) + " x " + std::to_string(m));
  }
  for (std::size_t id : index) {
    if (id >= n) throw ShapeError("gather_rows: row " + std::to_string(id) + " out of range");
  }
  std::vector<T> y(batch * m * d);
  const T* xv = x.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < m; ++r) {
      const T* src = xv + (b * n + index[b * m + r]) * d;
      std::copy(src, src + d, y.data() + (b * m + r) * d);
    }
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  return make_op<T>(Shape{batch, m, d}, std::move(y), {x}, [batch, n, d, m, idx](Node<T>& self) {
    T* dx = parent_grad(self, 0);
    if (!dx) return;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t r = 0; r < m; ++r) {
        T* dst = dx + (b * n + (*idx)[b * m + r]) * d;
        const T* src = self.grad.data() + (b * m + r) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
  });
}

template <class T>
Tensor<T> repeat_batch(const Tensor<T>& x, std::size_t count) {
  require_defined(x.defined(), "repeat_batch");
  const std::size_t n = x.numel();
  std::vector<T> y;
  y.reserve(n * count);
  for (std::size_t c = 0; c < count; ++c) y.insert(y.end(), x.data().begin(), x.data().end());
  Shape shape{count};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  return make_op<T>(std::move(shape), std::move(y), {x}, [n, count](Node<T>& self) {
    T* dx = parent_grad(self, 0);
    if (!dx) return;
    for (std::size_t c = 0; c < count; ++c) {
      for (std::size_t i = 0; i < n; ++i) dx[i] += self.grad[c * n + i];
    }
  });
}

template <class T>
Tensor<T> pick(const Tensor<T>& x, std::span<const std::size_t> index) {
  require_defined(x.defined(), "pick");
  if (x.rank() != 2 || index.size() != x.dim(0)) {
    throw ShapeError("pick: expected [B, A] input with B indices, got " + to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t cols = x.dim(1);
  std::vector<T> y(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (index[b] >= cols) throw ShapeError("pick: column out of range");
    y[b] = x.data()[b * cols + index[b]];
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  return make_op<T>(Shape{batch}, std::move(y), {x}, [batch, cols, idx](Node<T>& self) {
    if (T* dx = parent_grad(self, 0)) {
      for (std::size_t b = 0; b < batch; ++b) dx[b * cols + (*idx)[b]] += self.grad[b];
    }
  });
}

template <class T>
Tensor<T> masked_mean_rows(const Tensor<T>& x, std::span<const std::uint8_t> keep) {
  require_defined(x.defined(), "masked_mean_rows");
  if (x.rank() != 3) {
    throw ShapeError("masked_mean_rows: expected [B, n, d], got " + to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t n = x.dim(1);
  const std::size_t d = x.dim(2);
  if (keep.size() != batch * n) throw ShapeError("masked_mean_rows: mask length mismatch");
  auto weight = std::make_shared<std::vector<T>>(batch, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t count = 0;
    for (std::size_t r = 0; r < n; ++r) count += keep[b * n + r] ? 1 : 0;
    (*weight)[b] = count ? T(1) / static_cast<T>(count) : T(0);
  }
  auto flags = std::make_shared<std::vector<std::uint8_t>>(keep.begin(), keep.end());
  std::vector<T> y(batch * d, T(0));
  const T* xv = x.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < n; ++r) {
      if (!keep[b * n + r]) continue;
      for (std::size_t j = 0; j < d; ++j) y[b * d + j] += xv[(b * n + r) * d + j] * (*weight)[b];
    }
  }
  return make_op<T>(Shape{batch, d}, std::move(y), {x},
                    [batch, n, d, weight, flags](Node<T>& self) {
    T* dx = parent_grad(self, 0);
    if (!dx) return;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t r = 0; r < n; ++r) {
        if (!(*flags)[b * n + r]) continue;
        for (std::size_t j = 0; j < d; ++j) {
          dx[(b * n + r) * d + j] += self.grad[b * d + j] * (*weight)[b];
        }
      }
    }
  });
}

namespace {

// out[t * n + j] = x[j * stride + offset + t] for t < width, j < n.
template <class T>
void pack_transposed(const T* x, std::size_t n, std::size_t stride, std::size_t offset,
                     std::size_t width, T* out) {
  for (std::size_t j = 0; j < n; ++j) {
    const T* row = x + j * stride + offset;
    for (std::size_t t = 0; t < width; ++t) out[t * n + j] = row[t];
  }
}

// out[j] = sum_t a[t] * bt[t * n + j], summed in increasing t.
template <class T>
void dot_rows(const T* a, const T* bt, std::size_t width, std::size_t n, T* out) {
  for (std::size_t j = 0; j < n; ++j) out[j] = T(0);
  for (std::size_t t = 0; t < width; ++t) {
    const T at = a[t];
    const T* row = bt + t * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += at * row[j];
  }
}

}  // namespace

template <class T>
Tensor<T> self_attention(const Tensor<T>& qkv, const AttentionOptions& options,
                         std::vector<T>* probs_out) {
  require_defined(qkv.defined(), "self_attention");
  if (qkv.rank() != 3 || qkv.dim(2) % 3 != 0) {
    throw ShapeError("self_attention: expected [B, n, 3d], got " + to_string(qkv.shape()));
  }
  const std::size_t batch = qkv.dim(0);
  const std::size_t n = qkv.dim(1);
  const std::size_t d = qkv.dim(2) / 3;
  const std::size_t heads = options.heads;
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("self_attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (n == 0) throw ShapeError("self_attention: empty sequence");
  const std::size_t dh = d / heads;
  const bool masked = !options.key_valid.empty();
  if (masked && options.key_valid.size() != batch * n) {
    throw ShapeError("self_attention: key mask length mismatch");
  }
  const bool subset = !options.query_rows.empty();
  const std::size_t m = subset ? options.queries_per_batch : n;
  if (subset && options.query_rows.size() != batch * m) {
    throw ShapeError("self_attention: query row list length mismatch");
  }
  auto rows = std::make_shared<std::vector<std::size_t>>(batch * m);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t q = subset ? options.query_rows[b * m + r] : r;
      if (q >= n) throw ShapeError("self_attention: query row out of range");
      (*rows)[b * m + r] = q;
    }
  }
  auto valid = std::make_shared<std::vector<std::uint8_t>>(batch * n, std::uint8_t{1});
  if (masked) std::copy(options.key_valid.begin(), options.key_valid.end(), valid->begin());

  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  const std::size_t stride = 3 * d;
  auto probs = std::make_shared<std::vector<T>>(batch * heads * m * n, T(0));
  std::vector<T> y(batch * m * d, T(0));
  const T* base = qkv.data().data();
  // Keys are packed transposed ([dh, n]) so each score accumulates over t in
  // order while the loop over keys vectorizes.
  std::vector<T> kt(dh * n);
  std::vector<T> scores(n);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xb = base + b * n * stride;
    const std::uint8_t* vb = valid->data() + b * n;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t qo = h * dh;
      const std::size_t ko = d + h * dh;
      const std::size_t vo = 2 * d + h * dh;
      pack_transposed(xb, n, stride, ko, dh, kt.data());
      for (std::size_t r = 0; r < m; ++r) {
        const T* q = xb + (*rows)[b * m + r] * stride + qo;
        T* p = probs->data() + ((b * heads + h) * m + r) * n;
        dot_rows(q, kt.data(), dh, n, scores.data());
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (!vb[j]) continue;
          p[j] = scores[j] * scale_factor;
          mx = std::max(mx, p[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (!vb[j]) {
            p[j] = 0;
            continue;
          }
          p[j] = std::exp(p[j] - mx);
          total += p[j];
        }
        if (total > T(0)) {
          for (std::size_t j = 0; j < n; ++j) p[j] /= total;
        }
        T* out = y.data() + (b * m + r) * d + qo;
        for (std::size_t j = 0; j < n; ++j) {
          if (p[j] == T(0)) continue;
          const T* v = xb + j * stride + vo;
          const T pj = p[j];
          for (std::size_t t = 0; t < dh; ++t) out[t] += pj * v[t];
        }
      }
    }
  }
  if (probs_out) *probs_out = *probs;

  return make_op<T>(Shape{batch, m, d}, std::move(y), {qkv},
                    [batch, n, d, heads, dh, m, stride, scale_factor, rows, valid,
                     probs](Node<T>& self) {
    T* dx = parent_grad(self, 0);
    if (!dx) return;
    const T* xv = parent_value(self, 0);
    std::vector<T> dp(n);
    std::vector<T> vt(dh * n);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* xb = xv + b * n * stride;
      T* gb = dx + b * n * stride;
      const std::uint8_t* vb = valid->data() + b * n;
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t qo = h * dh;
        const std::size_t ko = d + h * dh;
        const std::size_t vo = 2 * d + h * dh;
        pack_transposed(xb, n, stride, vo, dh, vt.data());
        for (std::size_t r = 0; r < m; ++r) {
          const std::size_t qrow = (*rows)[b * m + r];
          const T* q = xb + qrow * stride + qo;
          const T* p = probs->data() + ((b * heads + h) * m + r) * n;
          const T* dout = self.grad.data() + (b * m + r) * d + qo;
          dot_rows(dout, vt.data(), dh, n, dp.data());
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) {
            if (!vb[j]) {
              dp[j] = 0;
              continue;
            }
            dot += p[j] * dp[j];
            T* dv = gb + j * stride + vo;
            const T pj = p[j];
            for (std::size_t t = 0; t < dh; ++t) dv[t] += pj * dout[t];
          }
          T* dq = gb + qrow * stride + qo;
          for (std::size_t j = 0; j < n; ++j) {
            if (!vb[j]) continue;
            const T ds = p[j] * (dp[j] - dot) * scale_factor;
            if (ds == T(0)) continue;
            const T* k = xb + j * stride + ko;
            T* dk = gb + j * stride + ko;
            for (std::size_t t = 0; t < dh; ++t) {
              dq[t] += ds * k[t];
              dk[t] += ds * q[t];
            }
          }
        }
      }
    }
  });
}

#define SPIRL_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> softmax(const Tensor<T>&, std::ptrdiff_t);                                  \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::ptrdiff_t);                      \
  template Tensor<T> slice(const Tensor<T>&, std::ptrdiff_t, std::size_t, std::size_t);          \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>, std::size_t);   \
  template Tensor<T> repeat_batch(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> pick(const Tensor<T>&, std::span<const std::size_t>);                       \
  template Tensor<T> masked_mean_rows(const Tensor<T>&, std::span<const std::uint8_t>);          \
  template Tensor<T> self_attention(const Tensor<T>&, const AttentionOptions&, std::vector<T>*);

SPIRL_INSTANTIATE_OPS(float)
SPIRL_INSTANTIATE_OPS(double)

#undef SPIRL_INSTANTIATE_OPS

}  // namespace spirl::ad
