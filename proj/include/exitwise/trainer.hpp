// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "exitwise/checkpoint.hpp"
#include "exitwise/data.hpp"
#include "exitwise/exits.hpp"
#include "exitwise/losses.hpp"
#include "exitwise/optim.hpp"

namespace exitwise {

struct TrainConfig {
  double lr = 3e-5;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  AdamConfig adam;
  bool freeze_encoder = false;
  LossWeights weights;
  std::optional<double> grad_clip;
  /// Restore the parameters of the epoch with the best teacher dev UAR.
  bool keep_best_dev = false;
  /// Record wall-clock seconds in the log. Off makes logs comparable byte for byte.
  bool log_timing = true;

  void validate() const;
};

/// Training and development clips plus the fixed input geometry.
struct TrainData {
  Corpus train;
  Corpus dev;
  std::size_t clip_length = 72;
  int sample_rate = 1600;
};

struct EpochRecord {
  std::size_t epoch = 0;  // contiguous from 1 across phases
  std::string phase;      // joint, finetune, regress, classify
  std::size_t steps = 0;
  LossReport loss;        // means over the epoch's steps
  std::map<std::string, double> train_uar, dev_uar;
  double seconds = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  std::size_t count(const std::string& phase) const;
  /// One JSON object per line.
  void write_jsonl(std::ostream& out, bool with_timing) const;
  static std::string to_json_line(const EpochRecord& record, bool with_timing);
};

/// Loss report of every optimizer step, for diagnostics and tests.
using StepObserver = std::function<void(std::size_t epoch, std::size_t step, const LossReport&)>;

struct TrainHooks {
  std::ostream* log_stream = nullptr;  // each epoch record as it completes
  StepObserver on_step;
};

/// Joint training of the teacher and every exit under the composite loss.
TrainLog fit_self_distill(MultiExitModel<float>& model, const TrainData& data, const TrainConfig& config,
                          const TrainHooks& hooks = {});

/// Copies every `backbone.*` tensor of a checkpoint into `params`; other
/// tensors are ignored. Returns the number of tensors copied.
std::size_t init_backbone_from(const std::vector<TensorRecord>& records, const nn::ParameterList<float>& params);

/// Truncated fine-tuning baseline: layers 1..k plus a fresh head, trained
/// with plain cross-entropy. Layers above k get no grad and stay untouched.
TrainLog fine_tune_truncated(TruncatedModel<float>& model, const TrainData& data, const TrainConfig& config,
                             const TrainHooks& hooks = {});

struct LayerwiseResult {
  TruncatedModel<float> student;
  std::vector<std::size_t> predict_layers;
  std::vector<nn::Linear<float>> predictors;  // one R->R head per target layer
  TrainLog log;
};

/// Two-stage layer-wise distillation baseline. The student (encoder plus
/// `student_depth` layers, initialized from the teacher) first regresses the
/// frozen teacher's hidden states at `predict_layers` through one linear
/// head each, then is fine-tuned with cross-entropy. Each stage runs
/// `config.epochs` epochs.
LayerwiseResult layerwise_distill(const MultiExitModel<float>& teacher, std::size_t student_depth,
                                  const std::vector<std::size_t>& predict_layers, const TrainData& data,
                                  const TrainConfig& config, const TrainHooks& hooks = {});

/// {N/3, 2N/3, N}, deduplicated.
std::vector<std::size_t> default_predict_layers(std::size_t num_layers);

struct ExitMetrics {
  std::string id;
  ConfusionMatrix confusion;
  double uar = 0;
};

struct Metrics {
  std::vector<ExitMetrics> exits;     // in model exit order
  std::optional<ExitMetrics> fusion;  // mean of student probabilities

  const ExitMetrics& at(const std::string& id) const;
};

/// Evaluates `ids` (all exits when empty). Fusion averages the probability
/// vectors of the student exits among `ids` and is present when `fusion` is
/// set and at least one student exit is selected.
Metrics evaluate(const ExitModel<float>& model, const Corpus& corpus, std::size_t clip_length, int sample_rate,
                 const std::vector<std::string>& ids = {}, bool fusion = true, std::size_t batch_size = 64);

}  // namespace exitwise
