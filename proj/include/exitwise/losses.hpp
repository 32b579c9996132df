// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "exitwise/exits.hpp"
#include "exitwise/types.hpp"

namespace exitwise {

/// Weights of the composite objective
///   total = ce_teacher + gamma * mean(ce_student) + alpha * kl + beta * sim.
struct LossWeights {
  double alpha = 1.0;  // KL
  double beta = 1.0;   // similarity
  double gamma = 1.0;  // student cross-entropy
  SimKind sim = SimKind::L2;
  SimLevel level = SimLevel::Embedding;
  double temperature = 1.0;
  /// Treat teacher-side tensors as constants in the KL and similarity terms.
  bool detach_teacher = true;

  void validate() const;
};

struct LossReport {
  double total = 0;
  double ce_teacher = 0;
  double ce_students = 0;  // mean over exits, before gamma
  double kl = 0;
  double sim = 0;
  std::vector<double> exit_ce, exit_kl, exit_sim;
  std::size_t degenerate_pairs = 0;  // zero-norm rows skipped by cosine

  /// total recomputed from the parts with the given weights.
  double reconstructed(const LossWeights& w) const;
};

/// Mean over the batch of -log softmax(logits)[y].
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, const std::vector<int>& labels);

/// Teacher CE plus gamma times the mean student CE (0 with no students).
template <typename T>
BasicTensor<T> composite_ce(const BasicTensor<T>& teacher, const std::vector<BasicTensor<T>>& students,
                            const std::vector<int>& labels, T gamma);

/// Mean over students of KL(softmax(teacher/tau) || softmax(student/tau)),
/// each averaged over the batch.
template <typename T>
BasicTensor<T> kl_loss(const BasicTensor<T>& teacher, const std::vector<BasicTensor<T>>& students, T temperature = T(1),
                       bool detach_teacher = true);

/// One pair u[B,D], v[B,D]: L1 = mean|u-v|, L2 = mean (u-v)^2,
/// Cosine = -mean_b cos(u_b, v_b); combinations add their parts.
template <typename T>
BasicTensor<T> similarity(SimKind kind, const BasicTensor<T>& u, const BasicTensor<T>& v,
                          std::size_t* degenerate = nullptr);

/// Mean of `similarity` over exits. `levels[i]` picks (H_N, H_M_i) or
/// (H_L, H_L_i) for exit i.
template <typename T>
BasicTensor<T> sim_loss(SimKind kind, const std::vector<SimLevel>& levels, const BasicTensor<T>& teacher_embedding,
                        const BasicTensor<T>& teacher_hidden, const std::vector<BasicTensor<T>>& exit_embeddings,
                        const std::vector<BasicTensor<T>>& exit_hiddens, bool detach_teacher = true,
                        std::size_t* degenerate = nullptr);

/// Full objective over one forward pass.
template <typename T>
std::pair<BasicTensor<T>, LossReport> total_loss(const ForwardOutputs<T>& out, const std::vector<int>& labels,
                                                 const LossWeights& weights, const std::vector<ExitSpec>& exits);

}  // namespace exitwise
