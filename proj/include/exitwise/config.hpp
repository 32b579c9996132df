// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "exitwise/data.hpp"
#include "exitwise/exits.hpp"
#include "exitwise/trainer.hpp"

namespace exitwise {

enum class TrainMode { SelfDistill, Truncated, Layerwise };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);

struct DataConfig {
  std::string source = "synth";  // synth | wav-manifest
  SynthOptions synth;
  std::string manifest;  // wav-manifest only
  std::string root;      // directory the manifest paths are relative to
  std::vector<std::string> class_names{"anger", "disgust", "fear", "guilt", "happiness", "sadness", "surprise"};
  std::array<double, 3> split{0.7, 0.15, 0.15};
  std::uint64_t split_seed = 11;
  std::size_t clip_length = 72;
};

struct OutputConfig {
  std::string dir = "runs/default";
  std::string checkpoint = "model.ckpt";
  std::string log = "train.jsonl";
  std::string catalog = "catalog.json";

  std::filesystem::path checkpoint_path() const { return std::filesystem::path(dir) / checkpoint; }
  std::filesystem::path log_path() const { return std::filesystem::path(dir) / log; }
  std::filesystem::path catalog_path() const { return std::filesystem::path(dir) / catalog; }
};

struct RunConfig {
  ModelConfig model;
  LossWeights loss;
  TrainConfig train;
  TrainMode mode = TrainMode::SelfDistill;
  std::string init_checkpoint;  // pretrained weights, copied by name
  std::size_t truncate_layer = 2;
  std::size_t student_depth = 2;
  std::vector<std::size_t> predict_layers;  // empty: {N/3, 2N/3, N}
  bool refit_on_train_plus_dev = false;
  DataConfig data;
  OutputConfig output;

  /// Cross-section checks; paths are checked by `check_paths`.
  void validate() const;
  /// Referenced input files exist.
  void check_paths() const;
};

/// Parses a JSON run config. Unknown keys anywhere raise ConfigError naming
/// the dotted key. `overrides` are `section.key=value` strings applied in
/// order before parsing; values are JSON, falling back to plain strings.
RunConfig parse_run_config(const std::string& json_text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// The config as JSON, with every field spelled out.
std::string dump_run_config(const RunConfig& config);

}  // namespace exitwise
