// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

// Dense compute kernels. The functions in `exitwise::kernels` are the
// OpenMP-parallel versions used by the tensor ops; `kernels::reference`
// holds straightforward serial implementations that the tests and the
// benchmark compare against.
//
// Parallel kernels split work only across independent output rows, so each
// output element is reduced by a single thread in a fixed order. Results are
// therefore bit-identical for any thread count.

namespace exitwise::kernels {

/// Caps the OpenMP team size for the calling thread. 0 restores the default.
void set_num_threads(int n);
int num_threads();

/// C[M,N] (+)= op(A) * op(B), row-major. op(A) is A[M,K] or, when
/// `trans_a`, A[K,M] read transposed; likewise for B ([K,N] or [N,K]).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate);

/// Row-wise numerically stable softmax over `cols` contiguous entries.
template <typename T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t cols);

/// Row-wise layer normalization. Writes normalized (pre-affine) values to
/// `xhat` and per-row inverse std to `inv_std`, and the affine result to `y`.
template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* inv_std, std::size_t rows,
                     std::size_t cols, T eps);

/// Sliding-window patch extraction for 1-D convolution over x[B,S,C]:
/// out[B,F,K*C] with F = (S - K) / stride + 1.
template <typename T>
void unfold1d(const T* x, T* out, std::size_t batch, std::size_t length, std::size_t channels, std::size_t kernel,
              std::size_t stride);

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate);

template <typename T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t cols);

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* inv_std, std::size_t rows,
                     std::size_t cols, T eps);

template <typename T>
void unfold1d(const T* x, T* out, std::size_t batch, std::size_t length, std::size_t channels, std::size_t kernel,
              std::size_t stride);

}  // namespace reference
}  // namespace exitwise::kernels
