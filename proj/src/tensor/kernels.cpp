// SPDX-License-Identifier: Apache-2.0
#include "spirl/tensor/kernels.hpp"

#include <algorithm>
#include <type_traits>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace spirl::ad::kernels {
namespace {

// Scalar reference path. Every output element is accumulated over p in
// increasing order with separate multiply and add, which the vector path
// below reproduces bit for bit.
template <class T>
void gemm_rows(std::size_t row_begin, std::size_t row_end, std::size_t col_begin,
               std::size_t k, std::size_t n, const T* __restrict a, const T* __restrict b,
               T* __restrict c) {
  for (std::size_t i = row_begin; i < row_end; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T x = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = col_begin; j < n; ++j) ci[j] += x * bp[j];
    }
  }
}

#if defined(__AVX512F__)
// 4 x 32 register tile.
void gemm_f32_avx512(std::size_t m, std::size_t k, std::size_t n, const float* __restrict a,
                     const float* __restrict b, float* __restrict c) {
  const std::size_t m4 = m - m % 4;
  const std::size_t n32 = n - n % 32;
  for (std::size_t i = 0; i < m4; i += 4) {
    const float* a0 = a + i * k;
    const float* a1 = a0 + k;
    const float* a2 = a1 + k;
    const float* a3 = a2 + k;
    float* r0 = c + i * n;
    float* r1 = r0 + n;
    float* r2 = r1 + n;
    float* r3 = r2 + n;
    for (std::size_t j = 0; j < n32; j += 32) {
      __m512 c00 = _mm512_loadu_ps(r0 + j), c01 = _mm512_loadu_ps(r0 + j + 16);
      __m512 c10 = _mm512_loadu_ps(r1 + j), c11 = _mm512_loadu_ps(r1 + j + 16);
      __m512 c20 = _mm512_loadu_ps(r2 + j), c21 = _mm512_loadu_ps(r2 + j + 16);
      __m512 c30 = _mm512_loadu_ps(r3 + j), c31 = _mm512_loadu_ps(r3 + j + 16);
      for (std::size_t p = 0; p < k; ++p) {
        const float* bp = b + p * n + j;
        const __m512 b0 = _mm512_loadu_ps(bp);
        const __m512 b1 = _mm512_loadu_ps(bp + 16);
        __m512 x = _mm512_set1_ps(a0[p]);
        c00 = _mm512_add_ps(c00, _mm512_mul_ps(x, b0));
        c01 = _mm512_add_ps(c01, _mm512_mul_ps(x, b1));
        x = _mm512_set1_ps(a1[p]);
        c10 = _mm512_add_ps(c10, _mm512_mul_ps(x, b0));
        c11 = _mm512_add_ps(c11, _mm512_mul_ps(x, b1));
        x = _mm512_set1_ps(a2[p]);
        c20 = _mm512_add_ps(c20, _mm512_mul_ps(x, b0));
        c21 = _mm512_add_ps(c21, _mm512_mul_ps(x, b1));
        x = _mm512_set1_ps(a3[p]);
        c30 = _mm512_add_ps(c30, _mm512_mul_ps(x, b0));
        c31 = _mm512_add_ps(c31, _mm512_mul_ps(x, b1));
      }
      _mm512_storeu_ps(r0 + j, c00);
      _mm512_storeu_ps(r0 + j + 16, c01);
      _mm512_storeu_ps(r1 + j, c10);
      _mm512_storeu_ps(r1 + j + 16, c11);
      _mm512_storeu_ps(r2 + j, c20);
      _mm512_storeu_ps(r2 + j + 16, c21);
      _mm512_storeu_ps(r3 + j, c30);
      _mm512_storeu_ps(r3 + j + 16, c31);
    }
  }
  if (n32 < n) gemm_rows(0, m4, n32, k, n, a, b, c);
  gemm_rows(m4, m, 0, k, n, a, b, c);
}
#endif

}  // namespace

template <class T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float>) {
    gemm_f32_avx512(m, k, n, a, b, c);
    return;
  }
#endif
  gemm_rows(0, m, 0, k, n, a, b, c);
}

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    const std::size_t r1 = std::min(rows, r0 + kBlock);
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t cc = c0; cc < c1; ++cc) out[cc * rows + r] = in[r * cols + cc];
      }
    }
  }
}

template void gemm<float>(std::size_t, std::size_t, std::size_t, const float*, const float*,
                          float*, bool);
template void gemm<double>(std::size_t, std::size_t, std::size_t, const double*, const double*,
                           double*, bool);
template void transpose<float>(std::size_t, std::size_t, const float*, float*);
template void transpose<double>(std::size_t, std::size_t, const double*, double*);

}  // namespace spirl::ad::kernels
