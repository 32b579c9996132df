// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/nn.hpp"

#include <cmath>

#include "exitwise/error.hpp"

namespace exitwise::nn {

template <typename T>
BasicTensor<T> uniform_parameter(Shape shape, double bound, Rng& rng) {
  std::vector<T> data(numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
  return BasicTensor<T>(std::move(shape), std::move(data), true);
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = uniform_parameter<T>({in, out}, bound, rng);
  bias_ = uniform_parameter<T>({out}, bound, rng);
}

template <typename T>
BasicTensor<T> Linear<T>::forward(const BasicTensor<T>& x) const {
  return add(matmul(x, weight_), bias_);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
}

template <typename T>
Conv1d<T>::Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride, Rng& rng)
    : kernel_(kernel), stride_(stride), proj_(kernel * in_channels, out_channels, rng) {}

template <typename T>
BasicTensor<T> Conv1d<T>::forward(const BasicTensor<T>& x) const {
  return proj_.forward(unfold1d(x, kernel_, stride_));
}

template <typename T>
void Conv1d<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  proj_.collect(prefix, out);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t dim)
    : gain_(BasicTensor<T>::full({dim}, T(1), true)), bias_(BasicTensor<T>::zeros({dim}, true)) {}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".gain", gain_});
  out.push_back({prefix + ".bias", bias_});
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng)
    : dim_(dim), heads_(heads), qkv_(dim, 3 * dim, rng), out_(dim, dim, rng) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError("attention width " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
}

template <typename T>
BasicTensor<T> MultiHeadAttention<T>::forward(const BasicTensor<T>& x) const {
  const std::size_t b = x.dim(0), f = x.dim(1), d = dim_ / heads_;
  const auto qkv = qkv_.forward(x);  // [B,F,3R]
  auto heads_of = [&](std::size_t part, const std::vector<std::size_t>& order) {
    return permute(reshape(narrow(qkv, 2, part * dim_, dim_), {b, f, heads_, d}), order);
  };
  const auto q = heads_of(0, {0, 2, 1, 3});  // [B,H,F,d]
  const auto k = heads_of(1, {0, 2, 3, 1});  // [B,H,d,F]
  const auto v = heads_of(2, {0, 2, 1, 3});  // [B,H,F,d]
  const auto scores = mul_scalar(matmul(q, k), T(1) / std::sqrt(static_cast<T>(d)));
  const auto ctx = matmul(softmax(scores, 3), v);  // [B,H,F,d]
  return out_.forward(reshape(permute(ctx, {0, 2, 1, 3}), {b, f, dim_}));
}

template <typename T>
void MultiHeadAttention<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  qkv_.collect(prefix + ".qkv", out);
  out_.collect(prefix + ".out", out);
}

template <typename T>
TransformerLayer<T>::TransformerLayer(std::size_t dim, std::size_t heads, std::size_t ff_dim, double dropout, Rng& rng)
    : dropout_(dropout),
      attn_(dim, heads, rng),
      norm1_(dim),
      ff1_(dim, ff_dim, rng),
      ff2_(ff_dim, dim, rng),
      norm2_(dim) {}

template <typename T>
BasicTensor<T> TransformerLayer<T>::forward(const BasicTensor<T>& x, Rng* rng) const {
  auto drop = [&](const BasicTensor<T>& t) { return rng ? dropout(t, dropout_, *rng) : t; };
  const auto h = norm1_.forward(add(x, drop(attn_.forward(x))));
  const auto ff = ff2_.forward(gelu(ff1_.forward(h)));
  return norm2_.forward(add(h, drop(ff)));
}

template <typename T>
void TransformerLayer<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  attn_.collect(prefix + ".attn", out);
  norm1_.collect(prefix + ".norm1", out);
  ff1_.collect(prefix + ".ff1", out);
  ff2_.collect(prefix + ".ff2", out);
  norm2_.collect(prefix + ".norm2", out);
}

template <typename T>
Lstm<T>::Lstm(std::size_t input, std::size_t hidden, Rng& rng) : hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih_ = uniform_parameter<T>({input, 4 * hidden}, bound, rng);
  w_hh_ = uniform_parameter<T>({hidden, 4 * hidden}, bound, rng);
  bias_ = uniform_parameter<T>({4 * hidden}, bound, rng);
}

template <typename T>
BasicTensor<T> Lstm<T>::forward(const BasicTensor<T>& x) const {
  if (x.rank() != 3) throw ShapeError("lstm expects (B,F,In), got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), f = x.dim(1), h = hidden_;
  // Input projections for all steps at once.
  const auto xw = add(matmul(x, w_ih_), bias_);  // [B,F,4H]
  auto hs = BasicTensor<T>::zeros({b, h});
  auto cs = BasicTensor<T>::zeros({b, h});
  std::vector<BasicTensor<T>> outs;
  outs.reserve(f);
  for (std::size_t t = 0; t < f; ++t) {
    const auto gates = add(select(xw, 1, t), matmul(hs, w_hh_));
    const auto i = sigmoid(narrow(gates, 1, 0, h));
    const auto fg = sigmoid(narrow(gates, 1, h, h));
    const auto g = tanh(narrow(gates, 1, 2 * h, h));
    const auto o = sigmoid(narrow(gates, 1, 3 * h, h));
    cs = add(mul(fg, cs), mul(i, g));
    hs = mul(o, tanh(cs));
    outs.push_back(hs);
  }
  return stack(outs, 1);
}

template <typename T>
void Lstm<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".w_ih", w_ih_});
  out.push_back({prefix + ".w_hh", w_hh_});
  out.push_back({prefix + ".bias", bias_});
}

template <typename T>
Gru<T>::Gru(std::size_t input, std::size_t hidden, Rng& rng) : hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih_ = uniform_parameter<T>({input, 3 * hidden}, bound, rng);
  w_hh_ = uniform_parameter<T>({hidden, 3 * hidden}, bound, rng);
  b_ih_ = uniform_parameter<T>({3 * hidden}, bound, rng);
  b_hh_ = uniform_parameter<T>({3 * hidden}, bound, rng);
}

template <typename T>
BasicTensor<T> Gru<T>::forward(const BasicTensor<T>& x) const {
  if (x.rank() != 3) throw ShapeError("gru expects (B,F,In), got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), f = x.dim(1), h = hidden_;
  const auto xw = add(matmul(x, w_ih_), b_ih_);  // [B,F,3H]
  auto hs = BasicTensor<T>::zeros({b, h});
  std::vector<BasicTensor<T>> outs;
  outs.reserve(f);
  for (std::size_t t = 0; t < f; ++t) {
    const auto xt = select(xw, 1, t);
    const auto hw = add(matmul(hs, w_hh_), b_hh_);
    const auto r = sigmoid(add(narrow(xt, 1, 0, h), narrow(hw, 1, 0, h)));
    const auto z = sigmoid(add(narrow(xt, 1, h, h), narrow(hw, 1, h, h)));
    const auto n = tanh(add(narrow(xt, 1, 2 * h, h), mul(r, narrow(hw, 1, 2 * h, h))));
    hs = add(n, mul(z, sub(hs, n)));
    outs.push_back(hs);
  }
  return stack(outs, 1);
}

template <typename T>
void Gru<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".w_ih", w_ih_});
  out.push_back({prefix + ".w_hh", w_hh_});
  out.push_back({prefix + ".b_ih", b_ih_});
  out.push_back({prefix + ".b_hh", b_hh_});
}

template BasicTensor<float> uniform_parameter<float>(Shape, double, Rng&);
template BasicTensor<double> uniform_parameter<double>(Shape, double, Rng&);
template class Linear<float>;
template class Linear<double>;
template class Conv1d<float>;
template class Conv1d<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class TransformerLayer<float>;
template class TransformerLayer<double>;
template class Lstm<float>;
template class Lstm<double>;
template class Gru<float>;
template class Gru<double>;

}  // namespace exitwise::nn
