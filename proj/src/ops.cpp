// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "exitwise/error.hpp"
#include "exitwise/kernels.hpp"

namespace exitwise {

namespace {

template <typename T>
using TT = BasicTensor<T>;

// Checks that b broadcasts onto a (same, trailing suffix, or one element).
void check_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (numel(b) == 1) return;
  bool ok = b.size() <= a.size();
  for (std::size_t i = 0; ok && i < b.size(); ++i) ok = a[a.size() - b.size() + i] == b[i];
  if (!ok) throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
}

// Splits a shape around `axis` into (outer, axis extent, inner).
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename T, typename Fwd, typename Dfn>
TT<T> unary(const TT<T>& x, const char* op, Fwd fwd, Dfn dydx) {
  const auto& xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  return detail::make_result<T>(x.shape(), std::move(out), op, {x.node()}, [dydx](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dydx(p.data[i], self.data[i]);
  });
}

}  // namespace

template <typename T>
TT<T> add(const TT<T>& a, const TT<T>& b) {
  check_broadcast(a.shape(), b.shape(), "add");
  const auto& ad = a.data();
  const auto& bd = b.data();
  const std::size_t nb = bd.size();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + bd[i % nb];
  return detail::make_result<T>(a.shape(), std::move(out), "add", {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      const std::size_t nb = g.size();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i];
    }
  });
}

template <typename T>
TT<T> sub(const TT<T>& a, const TT<T>& b) {
  check_broadcast(a.shape(), b.shape(), "sub");
  const auto& ad = a.data();
  const auto& bd = b.data();
  const std::size_t nb = bd.size();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] - bd[i % nb];
  return detail::make_result<T>(a.shape(), std::move(out), "sub", {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      const std::size_t nb = g.size();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] -= self.grad[i];
    }
  });
}

template <typename T>
TT<T> mul(const TT<T>& a, const TT<T>& b) {
  check_broadcast(a.shape(), b.shape(), "mul");
  const auto& ad = a.data();
  const auto& bd = b.data();
  const std::size_t nb = bd.size();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * bd[i % nb];
  return detail::make_result<T>(a.shape(), std::move(out), "mul", {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const std::size_t nb = pb.data.size();
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i % nb];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i] * pa.data[i];
    }
  });
}

template <typename T>
TT<T> neg(const TT<T>& x) {
  return mul_scalar(x, T(-1));
}

template <typename T>
TT<T> mul_scalar(const TT<T>& x, T s) {
  return unary<T>(x, "mul_scalar", [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
TT<T> add_scalar(const TT<T>& x, T s) {
  return unary<T>(x, "add_scalar", [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
TT<T> relu(const TT<T>& x) {
  // NaN passes through so a numeric fault still surfaces downstream.
  return unary<T>(x, "relu", [](T v) { return v <= T(0) ? T(0) : v; }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
TT<T> gelu(const TT<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return unary<T>(
      x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v); });
}

template <typename T>
TT<T> sigmoid(const TT<T>& x) {
  return unary<T>(
      x, "sigmoid",
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
TT<T> tanh(const TT<T>& x) {
  return unary<T>(x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
TT<T> abs(const TT<T>& x) {
  return unary<T>(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
TT<T> exp(const TT<T>& x) {
  return unary<T>(x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
TT<T> log(const TT<T>& x) {
  return unary<T>(x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
TT<T> square(const TT<T>& x) {
  return unary<T>(x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
TT<T> sum(const TT<T>& x) {
  T acc = 0;
  for (auto v : x.data()) acc += v;
  return detail::make_result<T>(Shape{}, {acc}, "sum", {x.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
TT<T> mean(const TT<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
TT<T> sum_axis(const TT<T>& x, std::size_t axis) {
  const auto sp = split_at(x.shape(), axis, "sum_axis");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(sp.outer * sp.inner, T(0));
  const auto& xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += xd[(o * sp.len + l) * sp.inner + i];
  return detail::make_result<T>(std::move(out_shape), std::move(out), "sum_axis", {x.node()}, [sp](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i) g[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
}

template <typename T>
TT<T> mean_axis(const TT<T>& x, std::size_t axis) {
  const auto len = x.shape().at(axis);
  return mul_scalar(sum_axis(x, axis), T(1) / static_cast<T>(len));
}

template <typename T>
TT<T> mean_pool(const TT<T>& x) {
  if (x.rank() != 3) throw ShapeError("mean_pool expects (B,F,R), got " + shape_str(x.shape()));
  return mean_axis(x, 1);
}

template <typename T>
TT<T> reshape(const TT<T>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>(std::move(shape), std::move(out), "reshape", {x.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
TT<T> permute(const TT<T>& x, const std::vector<std::size_t>& order) {
  const auto& s = x.shape();
  const std::size_t r = s.size();
  if (order.size() != r) throw ShapeError("permute: order length does not match rank of " + shape_str(s));
  std::vector<bool> used(r, false);
  for (auto o : order) {
    if (o >= r || used[o]) throw ShapeError("permute: invalid axis order");
    used[o] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = s[order[i]];
    src_strides[i] = in_strides[order[i]];
  }
  // Source offset for every output position, shared by forward and backward.
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> ctr(r, 0);
  for (std::size_t n = 0; n < index->size(); ++n) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += ctr[i] * src_strides[i];
    (*index)[n] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++ctr[i] < out_shape[i]) break;
      ctr[i] = 0;
    }
  }
  const auto& xd = x.data();
  std::vector<T> out(index->size());
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = xd[(*index)[n]];
  return detail::make_result<T>(std::move(out_shape), std::move(out), "permute", {x.node()}, [index](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t n = 0; n < index->size(); ++n) g[(*index)[n]] += self.grad[n];
  });
}

template <typename T>
TT<T> transpose(const TT<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> order(x.rank());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(x, order);
}

template <typename T>
TT<T> narrow(const TT<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto sp = split_at(x.shape(), axis, "narrow");
  if (length == 0 || start + length > sp.len)
    throw ShapeError("narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") outside axis of extent " + std::to_string(sp.len));
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const auto& xd = x.data();
  std::vector<T> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((o * sp.len + start) * sp.inner), length * sp.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * sp.inner));
  return detail::make_result<T>(std::move(out_shape), std::move(out), "narrow", {x.node()},
                                [sp, start, length](Node<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  for (std::size_t o = 0; o < sp.outer; ++o)
                                    for (std::size_t i = 0; i < length * sp.inner; ++i)
                                      g[(o * sp.len + start) * sp.inner + i] += self.grad[o * length * sp.inner + i];
                                });
}

template <typename T>
TT<T> select(const TT<T>& x, std::size_t axis, std::size_t index) {
  auto r = narrow(x, axis, index, 1);
  Shape s = x.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  return reshape(r, s);
}

template <typename T>
TT<T> stack(const std::vector<TT<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("stack of zero tensors");
  const Shape& s = xs[0].shape();
  for (auto& t : xs)
    if (t.shape() != s) throw ShapeError("stack: mismatched shapes " + shape_str(s) + " and " + shape_str(t.shape()));
  if (axis > s.size()) throw ShapeError("stack: axis out of range");
  Shape out_shape = s;
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), xs.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = xs.size();
  std::vector<T> out(outer * n * inner);
  std::vector<NodePtr<T>> parents;
  parents.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& d = xs[k].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * n + k) * inner));
    parents.push_back(xs[k].node());
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), "stack", std::move(parents),
                                [outer, inner, n](Node<T>& self) {
                                  for (std::size_t k = 0; k < n; ++k) {
                                    auto& p = *self.parents[k];
                                    if (!p.requires_grad) continue;
                                    auto& g = p.grad_buffer();
                                    for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t i = 0; i < inner; ++i)
                                        g[o * inner + i] += self.grad[(o * n + k) * inner + i];
                                  }
                                });
}

template <typename T>
TT<T> matmul(const TT<T>& a, const TT<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2 || as[as.size() - 1] != bs[bs.size() - 2])
    throw ShapeError("matmul: dimension mismatch between " + shape_str(as) + " and " + shape_str(bs));
  const std::size_t m = as[as.size() - 2], k = as.back(), n = bs.back();

  if (bs.size() == 2) {
    // Shared right operand: fold every batch axis of `a` into the row count.
    const std::size_t rows = a.numel() / k;
    Shape out_shape(as.begin(), as.end() - 1);
    out_shape.push_back(n);
    std::vector<T> out(rows * n);
    kernels::gemm<T>(false, false, rows, n, k, a.data().data(), b.data().data(), out.data(), false);
    return detail::make_result<T>(std::move(out_shape), std::move(out), "matmul", {a.node(), b.node()},
                                  [rows, n, k](Node<T>& self) {
                                    auto& pa = *self.parents[0];
                                    auto& pb = *self.parents[1];
                                    if (pa.requires_grad)
                                      kernels::gemm<T>(false, true, rows, k, n, self.grad.data(), pb.data.data(),
                                                       pa.grad_buffer().data(), true);
                                    if (pb.requires_grad)
                                      kernels::gemm<T>(true, false, k, n, rows, pa.data.data(), self.grad.data(),
                                                       pb.grad_buffer().data(), true);
                                  });
  }

  // General case: numpy-style broadcast over the leading batch axes.
  const Shape ab(as.begin(), as.end() - 2), bb(bs.begin(), bs.end() - 2);
  const std::size_t r = std::max(ab.size(), bb.size());
  Shape batch(r);
  std::vector<std::size_t> a_ext(r, 1), b_ext(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    if (i + ab.size() >= r) a_ext[i] = ab[i + ab.size() - r];
    if (i + bb.size() >= r) b_ext[i] = bb[i + bb.size() - r];
    if (a_ext[i] != b_ext[i] && a_ext[i] != 1 && b_ext[i] != 1)
      throw ShapeError("matmul: batch axes of " + shape_str(as) + " and " + shape_str(bs) + " do not broadcast");
    batch[i] = std::max(a_ext[i], b_ext[i]);
  }
  const std::size_t nbatch = numel(batch);
  auto offsets = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>(nbatch);
  std::vector<std::size_t> ctr(r, 0);
  for (std::size_t t = 0; t < nbatch; ++t) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < r; ++i) {
      ia = ia * a_ext[i] + (a_ext[i] == 1 ? 0 : ctr[i]);
      ib = ib * b_ext[i] + (b_ext[i] == 1 ? 0 : ctr[i]);
    }
    (*offsets)[t] = {ia * m * k, ib * k * n};
    for (std::size_t i = r; i-- > 0;) {
      if (++ctr[i] < batch[i]) break;
      ctr[i] = 0;
    }
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(nbatch * m * n);
  for (std::size_t t = 0; t < nbatch; ++t)
    kernels::gemm<T>(false, false, m, n, k, a.data().data() + (*offsets)[t].first,
                     b.data().data() + (*offsets)[t].second, out.data() + t * m * n, false);
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), "matmul", {a.node(), b.node()}, [offsets, m, n, k](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t t = 0; t < offsets->size(); ++t) {
          const auto [oa, ob] = (*offsets)[t];
          const T* g = self.grad.data() + t * m * n;
          if (pa.requires_grad)
            kernels::gemm<T>(false, true, m, k, n, g, pb.data.data() + ob, pa.grad_buffer().data() + oa, true);
          if (pb.requires_grad)
            kernels::gemm<T>(true, false, k, n, m, pa.data.data() + oa, g, pb.grad_buffer().data() + ob, true);
        }
      });
}

template <typename T>
TT<T> softmax(const TT<T>& x, std::size_t axis) {
  const auto sp = split_at(x.shape(), axis, "softmax");
  const auto& xd = x.data();
  std::vector<T> out(xd.size());
  if (sp.inner == 1) {
    kernels::softmax_rows<T>(xd.data(), out.data(), sp.outer, sp.len);
  } else {
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
        T mx = xd[at(0)];
        for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, xd[at(l)]);
        T s = 0;
        for (std::size_t l = 0; l < sp.len; ++l) s += (out[at(l)] = std::exp(xd[at(l)] - mx));
        for (std::size_t l = 0; l < sp.len; ++l) out[at(l)] /= s;
      }
  }
  return detail::make_result<T>(x.shape(), std::move(out), "softmax", {x.node()}, [sp](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& y = self.data;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        T dot = 0;
        for (std::size_t l = 0; l < sp.len; ++l) {
          const auto id = (o * sp.len + l) * sp.inner + i;
          dot += self.grad[id] * y[id];
        }
        for (std::size_t l = 0; l < sp.len; ++l) {
          const auto id = (o * sp.len + l) * sp.inner + i;
          g[id] += y[id] * (self.grad[id] - dot);
        }
      }
  });
}

template <typename T>
TT<T> log_softmax(const TT<T>& x, std::size_t axis) {
  const auto sp = split_at(x.shape(), axis, "log_softmax");
  const auto& xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
      T mx = xd[at(0)];
      for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, xd[at(l)]);
      T s = 0;
      for (std::size_t l = 0; l < sp.len; ++l) s += std::exp(xd[at(l)] - mx);
      const T lse = mx + std::log(s);
      for (std::size_t l = 0; l < sp.len; ++l) out[at(l)] = xd[at(l)] - lse;
    }
  return detail::make_result<T>(x.shape(), std::move(out), "log_softmax", {x.node()}, [sp](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        T gs = 0;
        for (std::size_t l = 0; l < sp.len; ++l) gs += self.grad[(o * sp.len + l) * sp.inner + i];
        for (std::size_t l = 0; l < sp.len; ++l) {
          const auto id = (o * sp.len + l) * sp.inner + i;
          g[id] += self.grad[id] - std::exp(self.data[id]) * gs;
        }
      }
  });
}

template <typename T>
TT<T> layer_norm(const TT<T>& x, const TT<T>& gain, const TT<T>& bias, T eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm on a scalar");
  const std::size_t cols = x.shape().back();
  if (gain.numel() != cols || bias.numel() != cols)
    throw ShapeError("layer_norm: affine parameters must have " + std::to_string(cols) + " entries");
  const std::size_t rows = x.numel() / cols;
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  kernels::layer_norm_rows<T>(x.data().data(), gain.data().data(), bias.data().data(), out.data(), xhat->data(),
                              inv_std->data(), rows, cols, eps);
  return detail::make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x.node(), gain.node(), bias.node()},
      [xhat, inv_std, rows, cols](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& gain = pg.data;
        if (pg.requires_grad) {
          auto& gg = pg.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gg[c] += self.grad[r * cols + c] * (*xhat)[r * cols + c];
        }
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gb[c] += self.grad[r * cols + c];
        }
        if (px.requires_grad) {
          auto& gx = px.grad_buffer();
          const T inv_n = T(1) / static_cast<T>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t c = 0; c < cols; ++c) {
              const T gh = self.grad[r * cols + c] * gain[c];
              m1 += gh;
              m2 += gh * (*xhat)[r * cols + c];
            }
            m1 *= inv_n;
            m2 *= inv_n;
            for (std::size_t c = 0; c < cols; ++c) {
              const T gh = self.grad[r * cols + c] * gain[c];
              gx[r * cols + c] += (*inv_std)[r] * (gh - m1 - (*xhat)[r * cols + c] * m2);
            }
          }
        }
      });
}

template <typename T>
TT<T> unfold1d(const TT<T>& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 3) throw ShapeError("unfold1d expects (B,S,C), got " + shape_str(x.shape()));
  if (kernel == 0 || stride == 0) throw ShapeError("unfold1d: kernel and stride must be positive");
  const std::size_t b = x.dim(0), s = x.dim(1), c = x.dim(2);
  if (s < kernel)
    throw ShapeError("unfold1d: sequence of length " + std::to_string(s) + " shorter than kernel " +
                     std::to_string(kernel));
  const std::size_t f = (s - kernel) / stride + 1;
  std::vector<T> out(b * f * kernel * c);
  kernels::unfold1d<T>(x.data().data(), out.data(), b, s, c, kernel, stride);
  return detail::make_result<T>(Shape{b, f, kernel * c}, std::move(out), "unfold1d", {x.node()},
                                [b, s, c, f, kernel, stride](Node<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  const std::size_t patch = kernel * c;
                                  for (std::size_t bi = 0; bi < b; ++bi)
                                    for (std::size_t fi = 0; fi < f; ++fi) {
                                      T* dst = g.data() + (bi * s + fi * stride) * c;
                                      const T* src = self.grad.data() + (bi * f + fi) * patch;
                                      for (std::size_t q = 0; q < patch; ++q) dst[q] += src[q];
                                    }
                                });
}

template <typename T>
TT<T> pick(const TT<T>& x, const std::vector<int>& labels) {
  if (x.rank() != 2 || labels.size() != x.dim(0))
    throw ShapeError("pick: expected (B,C) with B labels, got " + shape_str(x.shape()) + " and " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t c = x.dim(1);
  for (auto y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw DataError(DataError::Kind::BadLabel,
                      "label " + std::to_string(y) + " outside [0," + std::to_string(c) + ")");
  std::vector<T> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = x.data()[i * c + static_cast<std::size_t>(labels[i])];
  return detail::make_result<T>(Shape{labels.size()}, std::move(out), "pick", {x.node()},
                                [labels, c](Node<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < labels.size(); ++i)
                                    g[i * c + static_cast<std::size_t>(labels[i])] += self.grad[i];
                                });
}

template <typename T>
TT<T> row_cosine(const TT<T>& u, const TT<T>& v, std::size_t* degenerate) {
  if (u.rank() != 2 || u.shape() != v.shape())
    throw ShapeError("row_cosine: expected matching (B,D), got " + shape_str(u.shape()) + " and " +
                     shape_str(v.shape()));
  const std::size_t b = u.dim(0), d = u.dim(1);
  const auto& ud = u.data();
  const auto& vd = v.data();
  std::vector<T> out(b, T(0));
  // Per row: dot, |u|, |v|; zero norms mark the row degenerate.
  auto stats = std::make_shared<std::vector<T>>(3 * b, T(0));
  std::size_t bad = 0;
  for (std::size_t r = 0; r < b; ++r) {
    T dot = 0, nu = 0, nv = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += ud[r * d + j] * vd[r * d + j];
      nu += ud[r * d + j] * ud[r * d + j];
      nv += vd[r * d + j] * vd[r * d + j];
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    (*stats)[3 * r] = dot;
    (*stats)[3 * r + 1] = nu;
    (*stats)[3 * r + 2] = nv;
    if (nu == T(0) || nv == T(0)) {
      ++bad;
    } else {
      out[r] = dot / (nu * nv);
    }
  }
  if (degenerate) *degenerate = bad;
  return detail::make_result<T>(Shape{b}, std::move(out), "row_cosine", {u.node(), v.node()},
                                [stats, b, d](Node<T>& self) {
                                  auto& pu = *self.parents[0];
                                  auto& pv = *self.parents[1];
                                  for (std::size_t r = 0; r < b; ++r) {
                                    const T nu = (*stats)[3 * r + 1], nv = (*stats)[3 * r + 2];
                                    if (nu == T(0) || nv == T(0)) continue;
                                    const T c = self.data[r], g = self.grad[r];
                                    for (std::size_t j = 0; j < d; ++j) {
                                      const T uj = pu.data[r * d + j], vj = pv.data[r * d + j];
                                      if (pu.requires_grad)
                                        pu.grad_buffer()[r * d + j] += g * (vj / (nu * nv) - c * uj / (nu * nu));
                                      if (pv.requires_grad)
                                        pv.grad_buffer()[r * d + j] += g * (uj / (nu * nv) - c * vj / (nv * nv));
                                    }
                                  }
                                });
}

template <typename T>
TT<T> dropout(const TT<T>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ShapeError("dropout probability must be < 1");
  const T scale = T(1) / static_cast<T>(1.0 - p);
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  for (auto& m : *mask) m = rng.uniform() < p ? T(0) : scale;
  const auto& xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * (*mask)[i];
  return detail::make_result<T>(x.shape(), std::move(out), "dropout", {x.node()}, [mask](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

template <typename T>
TT<T> detach(const TT<T>& x) {
  return TT<T>(x.shape(), std::vector<T>(x.data().begin(), x.data().end()), false);
}

#define EXITWISE_INSTANTIATE_OPS(T)                                                              \
  template TT<T> add(const TT<T>&, const TT<T>&);                                                \
  template TT<T> sub(const TT<T>&, const TT<T>&);                                                \
  template TT<T> mul(const TT<T>&, const TT<T>&);                                                \
  template TT<T> neg(const TT<T>&);                                                              \
  template TT<T> mul_scalar(const TT<T>&, T);                                                    \
  template TT<T> add_scalar(const TT<T>&, T);                                                    \
  template TT<T> relu(const TT<T>&);                                                             \
  template TT<T> gelu(const TT<T>&);                                                             \
  template TT<T> sigmoid(const TT<T>&);                                                          \
  template TT<T> tanh(const TT<T>&);                                                             \
  template TT<T> abs(const TT<T>&);                                                              \
  template TT<T> exp(const TT<T>&);                                                              \
  template TT<T> log(const TT<T>&);                                                              \
  template TT<T> square(const TT<T>&);                                                           \
  template TT<T> sum(const TT<T>&);                                                              \
  template TT<T> mean(const TT<T>&);                                                             \
  template TT<T> sum_axis(const TT<T>&, std::size_t);                                            \
  template TT<T> mean_axis(const TT<T>&, std::size_t);                                           \
  template TT<T> mean_pool(const TT<T>&);                                                        \
  template TT<T> reshape(const TT<T>&, Shape);                                                   \
  template TT<T> permute(const TT<T>&, const std::vector<std::size_t>&);                         \
  template TT<T> transpose(const TT<T>&);                                                        \
  template TT<T> narrow(const TT<T>&, std::size_t, std::size_t, std::size_t);                    \
  template TT<T> select(const TT<T>&, std::size_t, std::size_t);                                 \
  template TT<T> stack(const std::vector<TT<T>>&, std::size_t);                                  \
  template TT<T> matmul(const TT<T>&, const TT<T>&);                                             \
  template TT<T> softmax(const TT<T>&, std::size_t);                                             \
  template TT<T> log_softmax(const TT<T>&, std::size_t);                                         \
  template TT<T> layer_norm(const TT<T>&, const TT<T>&, const TT<T>&, T);                        \
  template TT<T> unfold1d(const TT<T>&, std::size_t, std::size_t);                               \
  template TT<T> pick(const TT<T>&, const std::vector<int>&);                                    \
  template TT<T> row_cosine(const TT<T>&, const TT<T>&, std::size_t*);                           \
  template TT<T> dropout(const TT<T>&, double, Rng&);                                            \
  template TT<T> detach(const TT<T>&);

EXITWISE_INSTANTIATE_OPS(float)
EXITWISE_INSTANTIATE_OPS(double)

}  // namespace exitwise
