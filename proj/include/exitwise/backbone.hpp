// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <vector>

#include "exitwise/nn.hpp"

namespace exitwise {

struct ConvSpec {
  std::size_t out_channels;
  std::size_t kernel;
  std::size_t stride;
};

struct BackboneConfig {
  std::vector<ConvSpec> encoder_convs{{64, 5, 2}, {64, 5, 2}};
  std::size_t num_layers = 6;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  std::size_t head_hidden = 32;  // D1
  std::size_t num_classes = 7;   // D2
  double dropout = 0.0;

  /// Throws ConfigError on any violated invariant.
  void validate() const;
  /// Shortest waveform the encoder accepts.
  std::size_t min_input_length() const;
  /// Encoder output frames for a waveform of `samples` samples.
  std::size_t frames_for(std::size_t samples) const;
  /// Canonical text used for architecture hashing.
  std::string describe() const;
};

/// Activations of transformer layers 1..computed; only retained layers kept.
template <typename T>
struct HiddenStates {
  std::size_t computed = 0;
  std::map<std::size_t, BasicTensor<T>> activations;

  const BasicTensor<T>& at(std::size_t layer) const;
};

/// Outputs of a pooled two-linear classification head.
template <typename T>
struct HeadOutputs {
  BasicTensor<T> logits;  // [B,D2]
  BasicTensor<T> hidden;  // [B,D1], after ReLU
  BasicTensor<T> pooled;  // [B,R]
};

/// Mean-pool, Linear(R->D1), ReLU, Linear(D1->D2).
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead(std::size_t width, std::size_t hidden, std::size_t classes, Rng& rng);
  ClassifierHead(ClassifierHead&&) noexcept = default;
  ClassifierHead& operator=(ClassifierHead&&) noexcept = default;

  HeadOutputs<T> forward(const BasicTensor<T>& sequence) const;
  HeadOutputs<T> forward_pooled(const BasicTensor<T>& pooled) const;
  void collect(const std::string& prefix, nn::ParameterList<T>& out) const;

  nn::Linear<T>& l1() { return l1_; }
  nn::Linear<T>& l2() { return l2_; }

 private:
  nn::Linear<T> l1_, l2_;
};

/// Convolutional feature encoder followed by N post-norm transformer layers.
/// Parameter names: `backbone.encoder.*` and `backbone.layer.<j>.*`, j from 1.
template <typename T>
class Backbone {
 public:
  Backbone(const BackboneConfig& config, Rng& rng);
  Backbone(Backbone&&) noexcept = default;
  Backbone& operator=(Backbone&&) noexcept = default;

  const BackboneConfig& config() const { return config_; }

  /// wave[B,S] -> [B,F,R], positional encoding added.
  BasicTensor<T> feature_encode(const BasicTensor<T>& wave) const;

  /// Runs the encoder and transformer layers 1..k, never beyond. `rng`
  /// enables dropout when non-null.
  HiddenStates<T> forward_to_layer(const BasicTensor<T>& wave, std::size_t k, const std::set<std::size_t>& retain,
                                   Rng* rng = nullptr) const;

  /// Transformer layers executed since construction or the last reset.
  std::uint64_t layers_executed() const { return counter_->load(); }
  void reset_layer_counter() { counter_->store(0); }

  void collect_encoder(nn::ParameterList<T>& out) const;
  void collect_layer(std::size_t layer, nn::ParameterList<T>& out) const;
  void collect(nn::ParameterList<T>& out) const;

 private:
  BackboneConfig config_;
  std::vector<nn::Conv1d<T>> convs_;
  nn::LayerNorm<T> encoder_norm_;
  std::vector<nn::TransformerLayer<T>> layers_;
  std::unique_ptr<std::atomic<std::uint64_t>> counter_;
};

/// Multiply-accumulate counts used for FLOP estimates. Norms and
/// activations are ignored.
std::uint64_t encoder_macs(const BackboneConfig& config, std::size_t samples);
std::uint64_t layer_macs(const BackboneConfig& config, std::size_t frames);
std::uint64_t head_macs(const BackboneConfig& config);

}  // namespace exitwise
