// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "exitwise/backbone.hpp"
#include "exitwise/types.hpp"

namespace exitwise {

struct ExitSpec {
  std::size_t layer = 0;  // branch point ai, 1 <= ai < N
  BlockKind block = BlockKind::Conv1x1;
  /// Overrides the loss-wide similarity level for this exit.
  std::optional<SimLevel> sim_level;

  /// Stable id used by the runtime, reports and the CLI.
  std::string id() const { return "layer" + std::to_string(layer); }
};

/// Everything needed to rebuild a multi-exit model.
struct ModelConfig {
  BackboneConfig backbone;
  std::vector<ExitSpec> exits{{2, BlockKind::Conv1x1, std::nullopt}, {4, BlockKind::Conv1x1, std::nullopt}};

  /// Checks backbone invariants and that exit layers are strictly
  /// increasing and below N.
  void validate() const;
  std::uint32_t architecture_hash() const;
};

std::uint32_t fnv1a32(std::string_view text);

/// Per-exit tensors a single forward pass produces.
template <typename T>
struct ExitOutputs {
  BasicTensor<T> logits;    // O_ai [B,D2]
  BasicTensor<T> embedding; // H_M  [B,R], pooled block output
  BasicTensor<T> hidden;    // H_Lai [B,D1]
};

template <typename T>
struct ForwardOutputs {
  BasicTensor<T> logits;    // O [B,D2]
  BasicTensor<T> embedding; // H_N [B,R]
  BasicTensor<T> hidden;    // H_L [B,D1]
  std::vector<ExitOutputs<T>> exits;
};

/// Block applied to unpooled intermediate activations, [B,F,R] -> [B,F,R].
template <typename T>
class ExitBlock {
 public:
  virtual ~ExitBlock() = default;
  virtual BasicTensor<T> forward(const BasicTensor<T>& x) const = 0;
  virtual void collect(const std::string& prefix, nn::ParameterList<T>& out) const = 0;
  virtual std::uint64_t macs(std::size_t frames) const = 0;
};

template <typename T>
std::unique_ptr<ExitBlock<T>> make_block(BlockKind kind, std::size_t width, Rng& rng);

/// Block plus a pooled two-linear head. Parameters live under
/// `exit.<ai>.<kind>.`.
template <typename T>
class ExitBranch {
 public:
  ExitBranch(const ExitSpec& spec, const BackboneConfig& backbone, Rng& rng);
  ExitBranch(ExitBranch&&) noexcept = default;
  ExitBranch& operator=(ExitBranch&&) noexcept = default;

  ExitOutputs<T> forward(const BasicTensor<T>& activation) const;
  void collect(nn::ParameterList<T>& out) const;
  const ExitSpec& spec() const { return spec_; }
  std::string prefix() const;
  /// Block multiply-accumulates; the head is counted by the model.
  std::uint64_t macs(std::size_t frames) const;
  ExitBlock<T>& block() { return *block_; }

 private:
  ExitSpec spec_;
  std::unique_ptr<ExitBlock<T>> block_;
  ClassifierHead<T> head_;
};

struct ExitInfo {
  std::string id;
  std::size_t layer = 0;
  bool teacher = false;
};

/// Common surface of every trainable classifier with one or more exits.
template <typename T>
class ExitModel {
 public:
  virtual ~ExitModel() = default;

  /// Exits ordered by depth; the teacher, when present, is last.
  virtual std::vector<ExitInfo> exit_infos() const = 0;
  /// Logits of every exit in `exit_infos()` order, from one forward pass.
  virtual std::vector<BasicTensor<T>> all_logits(const BasicTensor<T>& wave) const = 0;
  /// Logits of one exit; executes only the layers that exit needs.
  virtual BasicTensor<T> logits_at(const BasicTensor<T>& wave, const std::string& id) const = 0;
  virtual nn::ParameterList<T> parameters() const = 0;
  /// Parameters needed to evaluate one exit.
  virtual nn::ParameterList<T> exit_parameters(const std::string& id) const = 0;
  /// Multiply-accumulates for one clip of `samples` samples through exit `id`.
  virtual std::uint64_t clip_macs(const std::string& id, std::size_t samples) const = 0;
  virtual std::uint32_t architecture_hash() const = 0;
  virtual const Backbone<T>& backbone() const = 0;
  virtual Backbone<T>& backbone() = 0;

  ExitInfo info(const std::string& id) const;
};

/// Teacher (backbone + head after layer N) with student exits attached.
template <typename T>
class MultiExitModel final : public ExitModel<T> {
 public:
  MultiExitModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  /// One pass over layers 1..N computing the teacher and every exit.
  ForwardOutputs<T> forward(const BasicTensor<T>& wave, Rng* dropout_rng = nullptr) const;

  std::vector<ExitInfo> exit_infos() const override;
  std::vector<BasicTensor<T>> all_logits(const BasicTensor<T>& wave) const override;
  BasicTensor<T> logits_at(const BasicTensor<T>& wave, const std::string& id) const override;
  nn::ParameterList<T> parameters() const override;
  nn::ParameterList<T> exit_parameters(const std::string& id) const override;
  std::uint64_t clip_macs(const std::string& id, std::size_t samples) const override;
  std::uint32_t architecture_hash() const override { return config_.architecture_hash(); }
  const Backbone<T>& backbone() const override { return backbone_; }
  Backbone<T>& backbone() override { return backbone_; }

  nn::ParameterList<T> teacher_parameters() const;
  ExitBranch<T>& exit(std::size_t i) { return exits_.at(i); }
  ClassifierHead<T>& head() { return head_; }

 private:
  ModelConfig config_;
  Backbone<T> backbone_;
  ClassifierHead<T> head_;
  std::vector<ExitBranch<T>> exits_;
};

/// Classifier over layers 1..k with a teacher-style head at layer k; the
/// layers above k are kept (for checkpoint compatibility) but never run.
/// Used by the truncated fine-tuning and layer-wise distillation baselines.
template <typename T>
class TruncatedModel final : public ExitModel<T> {
 public:
  TruncatedModel(const BackboneConfig& config, std::size_t depth, std::uint64_t seed);

  static std::uint32_t hash_for(const BackboneConfig& config, std::size_t depth);

  std::size_t depth() const { return depth_; }
  HeadOutputs<T> forward(const BasicTensor<T>& wave, Rng* dropout_rng = nullptr) const;

  std::vector<ExitInfo> exit_infos() const override;
  std::vector<BasicTensor<T>> all_logits(const BasicTensor<T>& wave) const override;
  BasicTensor<T> logits_at(const BasicTensor<T>& wave, const std::string& id) const override;
  nn::ParameterList<T> parameters() const override;
  nn::ParameterList<T> exit_parameters(const std::string& id) const override;
  std::uint64_t clip_macs(const std::string& id, std::size_t samples) const override;
  std::uint32_t architecture_hash() const override { return hash_for(backbone_.config(), depth_); }
  const Backbone<T>& backbone() const override { return backbone_; }
  Backbone<T>& backbone() override { return backbone_; }

  /// Encoder, layers 1..k and the head.
  nn::ParameterList<T> active_parameters() const;
  /// Layers k+1..N.
  nn::ParameterList<T> frozen_parameters() const;
  ClassifierHead<T>& head() { return head_; }

 private:
  std::size_t depth_;
  Backbone<T> backbone_;
  ClassifierHead<T> head_;
};

}  // namespace exitwise
