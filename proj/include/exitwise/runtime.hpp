// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "exitwise/exits.hpp"

namespace exitwise {

struct CatalogEntry {
  std::string id;
  std::size_t layer = 0;  // the teacher sits at layer N
  std::uint64_t params = 0;
  std::optional<std::uint64_t> flops;  // multiply-accumulates per encoder frame
  std::optional<double> latency_us;    // median, filled by bench
  std::optional<double> p95_us;
};

/// Per-exit costs, ordered by layer.
struct ExitCatalog {
  std::vector<CatalogEntry> entries;

  /// Nonempty, layers strictly increasing, params strictly increasing.
  void validate() const;
  const CatalogEntry& at(const std::string& id) const;
  CatalogEntry& at(const std::string& id);

  /// JSON object keyed by exit id:
  ///   {"layer2": {"layer": 2, "params": 123, "flops": 45, "latency_us": 6.7}, ...}
  std::string to_json() const;
  static ExitCatalog from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static ExitCatalog load(const std::filesystem::path& path);
};

/// Parameter counts and per-frame MACs of every exit for clips of `samples` samples.
ExitCatalog build_catalog(const ExitModel<float>& model, std::size_t samples);

enum class BudgetKind { Params, Flops, LatencyMicros, Depth };

struct Budget {
  BudgetKind kind = BudgetKind::Params;
  std::uint64_t limit = 0;

  /// `kind=limit`, kind one of params, flops, latency, depth. The limit is
  /// an integer, `a^b`, or scientific notation (`8e7`).
  static Budget parse(const std::string& text);
};

std::string to_string(BudgetKind kind);

/// Cost of an entry under a budget kind; throws ConfigError when the
/// catalog lacks that measurement.
double cost_of(const CatalogEntry& entry, BudgetKind kind);

/// Deepest exit whose cost is at most the limit. Throws BudgetInfeasible,
/// naming the cheapest exit and its cost, when nothing fits.
std::string select_exit(const ExitCatalog& catalog, const Budget& budget);

/// Softmax probabilities [B,D2] of one exit; runs only the layers it needs.
Tensor predict_at_exit(const ExitModel<float>& model, const Tensor& wave, const std::string& id);

enum class FusionRule { Mean, MajorityVote };

/// Combines per-exit distributions [B,D2]. Mean averages probabilities;
/// majority vote returns each row's vote shares.
Tensor fuse(const std::vector<Tensor>& probabilities, FusionRule rule = FusionRule::Mean);

/// Scalars needed to evaluate exit `id`.
std::uint64_t count_params(const ExitModel<float>& model, const std::string& id);

struct LatencyStats {
  std::string id;
  double median_us = 0;
  double p95_us = 0;
  std::uint64_t layers_executed = 0;  // per call
};

/// Times `repeats` calls of every exit on a fixed random batch and writes
/// the median and p95 into `catalog`. Requires repeats >= 3.
std::vector<LatencyStats> bench(const ExitModel<float>& model, ExitCatalog& catalog, std::size_t batch,
                                std::size_t samples, std::size_t repeats, std::uint64_t seed = 0);

}  // namespace exitwise
