// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/optim.hpp"

#include <cmath>

#include "exitwise/error.hpp"

namespace exitwise {

template <typename T>
void adam_step(const nn::ParameterList<T>& params, AdamState<T>& state, double lr, const AdamConfig& config) {
  if (state.step == 0 && state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), T(0));
      state.v.emplace_back(p.tensor.numel(), T(0));
    }
  }
  if (state.m.size() != params.size())
    throw ShapeError("adam state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                     std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i].tensor.numel())
      throw ShapeError("adam state for " + params[i].name + " has " + std::to_string(state.m[i].size()) +
                       " entries, parameter has " + std::to_string(params[i].tensor.numel()));

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto tensor = params[i].tensor;
    auto w = tensor.mutable_data();
    const auto g = tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has = !g.empty();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T gj = has ? g[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      const double mh = static_cast<double>(m[j]) / c1;
      const double vh = static_cast<double>(v[j]) / c2;
      w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * mh / (std::sqrt(vh) + config.eps));
    }
  }
}

template <typename T>
double clip_grad_norm(const nn::ParameterList<T>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params)
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T scale = static_cast<T>(max_norm / norm);
    for (const auto& p : params) {
      auto t = p.tensor;
      if (!t.has_grad()) continue;
      for (T& g : t.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

template void adam_step<float>(const nn::ParameterList<float>&, AdamState<float>&, double, const AdamConfig&);
template void adam_step<double>(const nn::ParameterList<double>&, AdamState<double>&, double, const AdamConfig&);
template double clip_grad_norm<float>(const nn::ParameterList<float>&, double);
template double clip_grad_norm<double>(const nn::ParameterList<double>&, double);

}  // namespace exitwise
