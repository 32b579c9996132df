// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "exitwise/ops.hpp"
#include "exitwise/rng.hpp"
#include "exitwise/tensor.hpp"

// Layers used by the backbone and the exit branches. Modules own their
// parameters as leaf tensors and are move-only: copying would alias them.

namespace exitwise::nn {

template <typename T>
struct NamedParameter {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

/// Leaf parameter filled uniformly from [-bound, bound].
template <typename T>
BasicTensor<T> uniform_parameter(Shape shape, double bound, Rng& rng);

std::uint64_t count_scalars(const auto& params) {
  std::uint64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);
  Linear(Linear&&) noexcept = default;
  Linear& operator=(Linear&&) noexcept = default;

  /// x[..,in] -> [..,out]
  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }
  BasicTensor<T>& weight() { return weight_; }
  BasicTensor<T>& bias() { return bias_; }

 private:
  BasicTensor<T> weight_;  // [in, out]
  BasicTensor<T> bias_;    // [out]
};

/// 1-D convolution over x[B,S,Cin], channels last, no padding.
template <typename T>
class Conv1d {
 public:
  Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride, Rng& rng);
  Conv1d(Conv1d&&) noexcept = default;
  Conv1d& operator=(Conv1d&&) noexcept = default;

  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }

 private:
  std::size_t kernel_, stride_;
  Linear<T> proj_;  // [K*Cin] -> [Cout]
};

template <typename T>
class LayerNorm {
 public:
  explicit LayerNorm(std::size_t dim);
  LayerNorm(LayerNorm&&) noexcept = default;
  LayerNorm& operator=(LayerNorm&&) noexcept = default;

  BasicTensor<T> forward(const BasicTensor<T>& x) const { return layer_norm(x, gain_, bias_); }
  void collect(const std::string& prefix, ParameterList<T>& out) const;

 private:
  BasicTensor<T> gain_, bias_;
};

template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng);
  MultiHeadAttention(MultiHeadAttention&&) noexcept = default;
  MultiHeadAttention& operator=(MultiHeadAttention&&) noexcept = default;

  /// Self-attention over x[B,F,R].
  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

 private:
  std::size_t dim_, heads_;
  Linear<T> qkv_, out_;
};

/// Post-norm encoder layer: x = LN(x + MHA(x)); x = LN(x + FF(x)), GELU in FF.
template <typename T>
class TransformerLayer {
 public:
  TransformerLayer(std::size_t dim, std::size_t heads, std::size_t ff_dim, double dropout, Rng& rng);
  TransformerLayer(TransformerLayer&&) noexcept = default;
  TransformerLayer& operator=(TransformerLayer&&) noexcept = default;

  /// `rng` non-null enables dropout.
  BasicTensor<T> forward(const BasicTensor<T>& x, Rng* rng) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

 private:
  double dropout_;
  MultiHeadAttention<T> attn_;
  LayerNorm<T> norm1_;
  Linear<T> ff1_, ff2_;
  LayerNorm<T> norm2_;
};

/// Single-layer unidirectional LSTM, gate order (input, forget, cell, output).
/// Runs over x[B,F,In] from a zero state and returns every step's hidden
/// state, [B,F,H].
template <typename T>
class Lstm {
 public:
  Lstm(std::size_t input, std::size_t hidden, Rng& rng);
  Lstm(Lstm&&) noexcept = default;
  Lstm& operator=(Lstm&&) noexcept = default;

  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  BasicTensor<T>& w_ih() { return w_ih_; }
  BasicTensor<T>& w_hh() { return w_hh_; }
  BasicTensor<T>& bias() { return bias_; }

 private:
  std::size_t hidden_;
  BasicTensor<T> w_ih_;  // [In, 4H]
  BasicTensor<T> w_hh_;  // [H, 4H]
  BasicTensor<T> bias_;  // [4H]
};

/// Single-layer unidirectional GRU with gate order (reset, update, new):
///   r = sig(x Wir + bir + h Whr + bhr), z = sig(x Wiz + biz + h Whz + bhz)
///   n = tanh(x Win + bin + r * (h Whn + bhn)),  h' = n + z * (h - n)
template <typename T>
class Gru {
 public:
  Gru(std::size_t input, std::size_t hidden, Rng& rng);
  Gru(Gru&&) noexcept = default;
  Gru& operator=(Gru&&) noexcept = default;

  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  BasicTensor<T>& b_ih() { return b_ih_; }
  BasicTensor<T>& b_hh() { return b_hh_; }

 private:
  std::size_t hidden_;
  BasicTensor<T> w_ih_, w_hh_;  // [In, 3H], [H, 3H]
  BasicTensor<T> b_ih_, b_hh_;  // [3H]
};

}  // namespace exitwise::nn
