// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "exitwise/kernels.hpp"

namespace exitwise::kernels::reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

template <typename T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const T mx = *std::max_element(x + i * cols, x + (i + 1) * cols);
    T sum = 0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(x[i * cols + j] - mx);
    for (std::size_t j = 0; j < cols; ++j) y[i * cols + j] = std::exp(x[i * cols + j] - mx) / sum;
  }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* inv_std, std::size_t rows,
                     std::size_t cols, T eps) {
  for (std::size_t i = 0; i < rows; ++i) {
    T mean = 0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[i * cols + j];
    mean /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t j = 0; j < cols; ++j) var += (x[i * cols + j] - mean) * (x[i * cols + j] - mean);
    var /= static_cast<T>(cols);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) {
      xhat[i * cols + j] = (x[i * cols + j] - mean) * inv_std[i];
      y[i * cols + j] = xhat[i * cols + j] * gain[j] + bias[j];
    }
  }
}

template <typename T>
void unfold1d(const T* x, T* out, std::size_t batch, std::size_t length, std::size_t channels, std::size_t kernel,
              std::size_t stride) {
  const std::size_t frames = (length - kernel) / stride + 1;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t q = 0; q < kernel; ++q)
        for (std::size_t ch = 0; ch < channels; ++ch)
          out[((b * frames + f) * kernel + q) * channels + ch] = x[(b * length + f * stride + q) * channels + ch];
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*, const double*, double*,
                           bool);
template void softmax_rows<float>(const float*, float*, std::size_t, std::size_t);
template void softmax_rows<double>(const double*, double*, std::size_t, std::size_t);
template void layer_norm_rows<float>(const float*, const float*, const float*, float*, float*, float*, std::size_t,
                                     std::size_t, float);
template void layer_norm_rows<double>(const double*, const double*, const double*, double*, double*, double*,
                                      std::size_t, std::size_t, double);
template void unfold1d<float>(const float*, float*, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t);
template void unfold1d<double>(const double*, double*, std::size_t, std::size_t, std::size_t, std::size_t,
                               std::size_t);

}  // namespace exitwise::kernels::reference
