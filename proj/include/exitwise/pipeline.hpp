// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "exitwise/config.hpp"
#include "exitwise/trainer.hpp"

namespace exitwise {

/// The configured corpus, split by speaker.
Split load_split(const RunConfig& config);

/// Untrained model of the kind `config.mode` produces: the multi-exit model
/// for self-distillation, a truncated classifier for both baselines.
std::unique_ptr<ExitModel<float>> make_model(const RunConfig& config);

/// Copies tensors whose names and shapes match into `params`, optionally
/// limited to `backbone.*`. Returns how many were copied.
std::size_t init_from_records(const std::vector<TensorRecord>& records, const nn::ParameterList<float>& params,
                              bool backbone_only);

struct TrainOutcome {
  std::unique_ptr<ExitModel<float>> model;
  TrainLog log;
};

/// Runs the configured mode on the configured data. Does not write files.
TrainOutcome run_training(const RunConfig& config, const TrainHooks& hooks = {});

/// Model from `config` with weights from `checkpoint`.
std::unique_ptr<ExitModel<float>> load_trained(const RunConfig& config, const std::filesystem::path& checkpoint);

enum class SweepAxis { Exits, Blocks, SimLoss };

SweepAxis parse_sweep_axis(const std::string& text);

struct SweepPoint {
  std::string block;  // row label parts
  std::string loss;
  std::vector<std::string> overrides;
  RunConfig config;
};

/// Grid over the given axes (cartesian product when several are given).
/// exits: one single-exit model per layer 1..N-1; blocks: conv1x1, lstm, gru;
/// simloss: l1, l2, cosine, l1+cosine, l2+cosine.
std::vector<SweepPoint> sweep_grid(const RunConfig& base, const std::vector<SweepAxis>& axes);

struct SweepResult {
  std::string block, loss;
  std::vector<std::string> exit_ids;
  std::vector<double> dev_uar, test_uar;  // per exit, then teacher
  std::optional<double> dev_fusion, test_fusion;
  std::uint64_t parameter_total = 0;
};

/// Trains every grid point on up to `threads` worker threads; each point is
/// single-threaded internally, so results do not depend on `threads`.
std::vector<SweepResult> run_sweep(const std::vector<SweepPoint>& grid, std::size_t threads);

}  // namespace exitwise
