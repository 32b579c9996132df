// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "exitwise/rng.hpp"
#include "exitwise/tensor.hpp"

// Differentiable tensor operations. All are instantiated for float and
// double; the double instantiation exists for gradient checking.
//
// Binary elementwise ops accept `b` with the same shape as `a`, with a shape
// equal to a trailing suffix of `a`'s shape (bias/positional broadcast), or
// with a single element.

namespace exitwise {

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> neg(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mul_scalar(const BasicTensor<T>& x, T s);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& x, T s);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
/// Exact (erf) GELU.
template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> tanh(const BasicTensor<T>& x);
/// |x|, with subgradient 0 at 0.
template <typename T> BasicTensor<T> abs(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> log(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> square(const BasicTensor<T>& x);

/// Sum of all elements, as a scalar.
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
/// Reductions that remove `axis`.
template <typename T> BasicTensor<T> sum_axis(const BasicTensor<T>& x, std::size_t axis);
template <typename T> BasicTensor<T> mean_axis(const BasicTensor<T>& x, std::size_t axis);
/// x[B,F,R] -> [B,R], arithmetic mean over the time axis.
template <typename T> BasicTensor<T> mean_pool(const BasicTensor<T>& x);

template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T> BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& order);
/// Swaps the last two axes.
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> narrow(const BasicTensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
/// Index along `axis`, removing it.
template <typename T> BasicTensor<T> select(const BasicTensor<T>& x, std::size_t axis, std::size_t index);
/// Stacks equal-shaped tensors along a new axis.
template <typename T> BasicTensor<T> stack(const std::vector<BasicTensor<T>>& xs, std::size_t axis);

/// Batched matrix product [..,m,k] x [..,k,n]; batch axes broadcast.
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);
template <typename T> BasicTensor<T> log_softmax(const BasicTensor<T>& x, std::size_t axis);
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                          T eps = T(1e-5));

/// Patch extraction for 1-D convolution: x[B,S,C] -> [B,F,K*C].
template <typename T> BasicTensor<T> unfold1d(const BasicTensor<T>& x, std::size_t kernel, std::size_t stride);

/// x[B,C] -> [B], picking column labels[b] of row b.
template <typename T> BasicTensor<T> pick(const BasicTensor<T>& x, const std::vector<int>& labels);

/// Row-wise cosine similarity u[B,D], v[B,D] -> [B]. A row where either
/// vector has zero norm yields 0 with zero gradient; `degenerate`, when
/// given, receives the number of such rows.
template <typename T>
BasicTensor<T> row_cosine(const BasicTensor<T>& u, const BasicTensor<T>& v, std::size_t* degenerate = nullptr);

/// Inverted dropout; identity when p == 0.
template <typename T> BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Rng& rng);

/// Same value, cut out of the graph.
template <typename T> BasicTensor<T> detach(const BasicTensor<T>& x);

}  // namespace exitwise
