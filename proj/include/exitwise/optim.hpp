// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "exitwise/nn.hpp"

namespace exitwise {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers, one per parameter in the order the parameters are passed.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update from the parameters' accumulated grads.
/// Parameters without a grad are treated as having a zero grad. Buffers are
/// created on the first call; later calls must pass the same parameters.
template <typename T>
void adam_step(const nn::ParameterList<T>& params, AdamState<T>& state, double lr, const AdamConfig& config = {});

/// Scales all grads so their global L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
template <typename T>
double clip_grad_norm(const nn::ParameterList<T>& params, double max_norm);

template <typename T>
void zero_grads(const nn::ParameterList<T>& params) {
  for (const auto& p : params) {
    auto t = p.tensor;
    t.zero_grad();
  }
}

}  // namespace exitwise
