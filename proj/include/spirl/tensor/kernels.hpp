// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace spirl::ad::kernels {

// C[m x n] (+)= A[m x k] * B[k x n], all row-major and contiguous.
// The summation order over k is fixed, so results are reproducible.
template <class T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
          bool accumulate);

// out[cols x rows] = in[rows x cols]^T
template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out);

}  // namespace spirl::ad::kernels
