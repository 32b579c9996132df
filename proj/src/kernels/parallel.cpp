// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace exitwise::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

thread_local int t_threads = 0;

int team_size() { return t_threads > 0 ? t_threads : omp_get_max_threads(); }

}  // namespace

void set_num_threads(int n) { t_threads = n < 0 ? 0 : n; }

int num_threads() { return team_size(); }

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  if (m == 0 || n == 0 || k == 0) return;

  // Materialize B as [K,N] so the inner loop always streams contiguous rows.
  std::vector<T> bt;
  const T* bk = b;
  if (trans_b) {
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    bk = bt.data();
  }

  const bool par = m * n * k >= kParallelWork && m > 1;
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (par) num_threads(team_size())
  for (long long i = 0; i < rows; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = trans_a ? a[p * m + static_cast<std::size_t>(i)] : a[static_cast<std::size_t>(i) * k + p];
      const T* brow = bk + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t cols) {
  const bool par = rows * cols >= kParallelWork;
  const long long r = static_cast<long long>(rows);
#pragma omp parallel for schedule(static) if (par) num_threads(team_size())
  for (long long i = 0; i < r; ++i) {
    const T* xi = x + static_cast<std::size_t>(i) * cols;
    T* yi = y + static_cast<std::size_t>(i) * cols;
    T mx = xi[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
    T sum = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yi[j] /= sum;
  }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* inv_std, std::size_t rows,
                     std::size_t cols, T eps) {
  const bool par = rows * cols >= kParallelWork;
  const long long r = static_cast<long long>(rows);
#pragma omp parallel for schedule(static) if (par) num_threads(team_size())
  for (long long i = 0; i < r; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * cols;
    T mean = 0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[off + j];
    mean /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      const T d = x[off + j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(cols);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < cols; ++j) {
      const T h = (x[off + j] - mean) * is;
      xhat[off + j] = h;
      y[off + j] = h * gain[j] + bias[j];
    }
  }
}

template <typename T>
void unfold1d(const T* x, T* out, std::size_t batch, std::size_t length, std::size_t channels, std::size_t kernel,
              std::size_t stride) {
  const std::size_t frames = (length - kernel) / stride + 1;
  const std::size_t patch = kernel * channels;
  const long long total = static_cast<long long>(batch * frames);
  const bool par = batch * frames * patch >= kParallelWork;
#pragma omp parallel for schedule(static) if (par) num_threads(team_size())
  for (long long bf = 0; bf < total; ++bf) {
    const std::size_t bi = static_cast<std::size_t>(bf) / frames;
    const std::size_t f = static_cast<std::size_t>(bf) % frames;
    // A window of K consecutive frames of C channels is contiguous in x.
    const T* src = x + (bi * length + f * stride) * channels;
    std::memcpy(out + static_cast<std::size_t>(bf) * patch, src, patch * sizeof(T));
  }
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

}  // namespace exitwise::kernels
