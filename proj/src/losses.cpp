// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/losses.hpp"

#include <cmath>

#include "exitwise/error.hpp"

namespace exitwise {

void LossWeights::validate() const {
  for (double w : {alpha, beta, gamma})
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  if (!std::isfinite(temperature) || temperature <= 0.0) throw ConfigError("loss.temperature must be positive");
}

double LossReport::reconstructed(const LossWeights& w) const {
  return ce_teacher + w.gamma * ce_students + w.alpha * kl + w.beta * sim;
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, const std::vector<int>& labels) {
  return neg(mean(pick(log_softmax(logits, 1), labels)));
}

namespace {

template <typename T>
void check_same(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
}

template <typename T>
BasicTensor<T> average(const std::vector<BasicTensor<T>>& terms) {
  if (terms.empty()) return BasicTensor<T>::scalar(T(0));
  auto acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return mul_scalar(acc, T(1) / static_cast<T>(terms.size()));
}

template <typename T>
BasicTensor<T> kl_pair(const BasicTensor<T>& log_p, const BasicTensor<T>& student, T temperature) {
  const auto log_q = log_softmax(temperature == T(1) ? student : mul_scalar(student, T(1) / temperature), 1);
  const auto p = exp(log_p);
  // sum_c p (log p - log q), averaged over rows.
  return mul_scalar(sum(mul(p, sub(log_p, log_q))), T(1) / static_cast<T>(student.dim(0)));
}

}  // namespace

template <typename T>
BasicTensor<T> composite_ce(const BasicTensor<T>& teacher, const std::vector<BasicTensor<T>>& students,
                            const std::vector<int>& labels, T gamma) {
  std::vector<BasicTensor<T>> terms;
  for (const auto& s : students) {
    check_same(teacher, s, "composite_ce");
    terms.push_back(cross_entropy(s, labels));
  }
  auto total = cross_entropy(teacher, labels);
  if (terms.empty()) return total;
  return add(total, mul_scalar(average(terms), gamma));
}

template <typename T>
BasicTensor<T> kl_loss(const BasicTensor<T>& teacher, const std::vector<BasicTensor<T>>& students, T temperature,
                       bool detach_teacher) {
  const auto scaled = temperature == T(1) ? teacher : mul_scalar(teacher, T(1) / temperature);
  const auto log_p = log_softmax(detach_teacher ? detach(scaled) : scaled, 1);
  std::vector<BasicTensor<T>> terms;
  for (const auto& s : students) {
    check_same(teacher, s, "kl_loss");
    terms.push_back(kl_pair(log_p, s, temperature));
  }
  return average(terms);
}

template <typename T>
BasicTensor<T> similarity(SimKind kind, const BasicTensor<T>& u, const BasicTensor<T>& v, std::size_t* degenerate) {
  check_same(u, v, "similarity");
  auto l1 = [&] { return mean(abs(sub(u, v))); };
  auto l2 = [&] { return mean(square(sub(u, v))); };
  auto cosine = [&] { return neg(mean(row_cosine(u, v, degenerate))); };
  switch (kind) {
    case SimKind::L1: return l1();
    case SimKind::L2: return l2();
    case SimKind::Cosine: return cosine();
    case SimKind::L1Cosine: return add(l1(), cosine());
    case SimKind::L2Cosine: return add(l2(), cosine());
  }
  throw ConfigError("unknown similarity kind");
}

template <typename T>
BasicTensor<T> sim_loss(SimKind kind, const std::vector<SimLevel>& levels, const BasicTensor<T>& teacher_embedding,
                        const BasicTensor<T>& teacher_hidden, const std::vector<BasicTensor<T>>& exit_embeddings,
                        const std::vector<BasicTensor<T>>& exit_hiddens, bool detach_teacher,
                        std::size_t* degenerate) {
  if (levels.size() != exit_embeddings.size() || levels.size() != exit_hiddens.size())
    throw ShapeError("sim_loss: one level, embedding and hidden tensor needed per exit");
  const auto h_n = detach_teacher ? detach(teacher_embedding) : teacher_embedding;
  const auto h_l = detach_teacher ? detach(teacher_hidden) : teacher_hidden;
  std::vector<BasicTensor<T>> terms;
  std::size_t bad_total = 0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    std::size_t bad = 0;
    if (levels[i] == SimLevel::Embedding) {
      terms.push_back(similarity(kind, exit_embeddings[i], h_n, &bad));
    } else {
      terms.push_back(similarity(kind, exit_hiddens[i], h_l, &bad));
    }
    bad_total += bad;
  }
  if (degenerate) *degenerate = bad_total;
  return average(terms);
}

template <typename T>
std::pair<BasicTensor<T>, LossReport> total_loss(const ForwardOutputs<T>& out, const std::vector<int>& labels,
                                                 const LossWeights& w, const std::vector<ExitSpec>& exits) {
  if (exits.size() != out.exits.size()) throw ShapeError("total_loss: exit specs do not match forward outputs");
  LossReport report;
  const auto ce_t = cross_entropy(out.logits, labels);
  report.ce_teacher = static_cast<double>(ce_t.item());
  auto total = ce_t;
  if (out.exits.empty()) {
    report.total = report.ce_teacher;
    return {total, report};
  }

  const auto scaled = w.temperature == 1.0 ? out.logits : mul_scalar(out.logits, static_cast<T>(1.0 / w.temperature));
  const auto log_p = log_softmax(w.detach_teacher ? detach(scaled) : scaled, 1);
  const auto h_n = w.detach_teacher ? detach(out.embedding) : out.embedding;
  const auto h_l = w.detach_teacher ? detach(out.hidden) : out.hidden;

  std::vector<BasicTensor<T>> ce_terms, kl_terms, sim_terms;
  for (std::size_t i = 0; i < out.exits.size(); ++i) {
    const auto& e = out.exits[i];
    check_same(out.logits, e.logits, "total_loss");
    ce_terms.push_back(cross_entropy(e.logits, labels));
    kl_terms.push_back(kl_pair(log_p, e.logits, static_cast<T>(w.temperature)));
    const SimLevel level = exits[i].sim_level.value_or(w.level);
    std::size_t bad = 0;
    sim_terms.push_back(level == SimLevel::Embedding ? similarity(w.sim, e.embedding, h_n, &bad)
                                                     : similarity(w.sim, e.hidden, h_l, &bad));
    report.degenerate_pairs += bad;
    report.exit_ce.push_back(static_cast<double>(ce_terms.back().item()));
    report.exit_kl.push_back(static_cast<double>(kl_terms.back().item()));
    report.exit_sim.push_back(static_cast<double>(sim_terms.back().item()));
  }
  const auto ce_s = average(ce_terms);
  const auto kl = average(kl_terms);
  const auto sim = average(sim_terms);
  report.ce_students = static_cast<double>(ce_s.item());
  report.kl = static_cast<double>(kl.item());
  report.sim = static_cast<double>(sim.item());

  total = add(total, mul_scalar(ce_s, static_cast<T>(w.gamma)));
  if (w.alpha != 0.0) total = add(total, mul_scalar(kl, static_cast<T>(w.alpha)));
  if (w.beta != 0.0) total = add(total, mul_scalar(sim, static_cast<T>(w.beta)));
  report.total = static_cast<double>(total.item());
  return {total, report};
}

#define EXITWISE_INSTANTIATE_LOSSES(T)                                                                           \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, const std::vector<int>&);                         \
  template BasicTensor<T> composite_ce(const BasicTensor<T>&, const std::vector<BasicTensor<T>>&,                \
                                       const std::vector<int>&, T);                                              \
  template BasicTensor<T> kl_loss(const BasicTensor<T>&, const std::vector<BasicTensor<T>>&, T, bool);           \
  template BasicTensor<T> similarity(SimKind, const BasicTensor<T>&, const BasicTensor<T>&, std::size_t*);       \
  template BasicTensor<T> sim_loss(SimKind, const std::vector<SimLevel>&, const BasicTensor<T>&,                 \
                                   const BasicTensor<T>&, const std::vector<BasicTensor<T>>&,                    \
                                   const std::vector<BasicTensor<T>>&, bool, std::size_t*);                      \
  template std::pair<BasicTensor<T>, LossReport> total_loss(const ForwardOutputs<T>&, const std::vector<int>&,   \
                                                            const LossWeights&, const std::vector<ExitSpec>&);

EXITWISE_INSTANTIATE_LOSSES(float)
EXITWISE_INSTANTIATE_LOSSES(double)

}  // namespace exitwise
