// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/backbone.hpp"

#include <cmath>
#include <sstream>

#include "exitwise/error.hpp"

namespace exitwise {

void BackboneConfig::validate() const {
  if (encoder_convs.empty()) throw ConfigError("model.encoder_convs must list at least one convolution");
  for (const auto& c : encoder_convs)
    if (c.out_channels == 0 || c.kernel == 0 || c.stride == 0)
      throw ConfigError("model.encoder_convs entries need positive channels, kernel and stride");
  if (encoder_convs.back().out_channels != hidden)
    throw ConfigError("last encoder convolution must output hidden=" + std::to_string(hidden) + " channels");
  if (num_layers < 2) throw ConfigError("model.num_layers must be >= 2 so a shallower exit exists");
  if (hidden == 0 || heads == 0 || hidden % heads != 0)
    throw ConfigError("model.hidden must be a positive multiple of model.heads");
  if (ff_dim == 0 || head_hidden == 0 || num_classes < 2) throw ConfigError("model widths must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0,1)");
}

std::size_t BackboneConfig::min_input_length() const {
  // Walk backwards from one output frame.
  std::size_t need = 1;
  for (auto it = encoder_convs.rbegin(); it != encoder_convs.rend(); ++it) need = (need - 1) * it->stride + it->kernel;
  return need;
}

std::size_t BackboneConfig::frames_for(std::size_t samples) const {
  std::size_t len = samples;
  for (const auto& c : encoder_convs) {
    if (len < c.kernel) return 0;
    len = (len - c.kernel) / c.stride + 1;
  }
  return len;
}

std::string BackboneConfig::describe() const {
  std::ostringstream os;
  os << "encoder:";
  for (const auto& c : encoder_convs) os << c.out_channels << 'x' << c.kernel << 's' << c.stride << ',';
  os << ";N=" << num_layers << ";R=" << hidden << ";H=" << heads << ";ff=" << ff_dim << ";head=" << head_hidden << ','
     << num_classes;
  return os.str();
}

template <typename T>
const BasicTensor<T>& HiddenStates<T>::at(std::size_t layer) const {
  auto it = activations.find(layer);
  if (it == activations.end()) throw ShapeError("layer " + std::to_string(layer) + " activation was not retained");
  return it->second;
}

template <typename T>
ClassifierHead<T>::ClassifierHead(std::size_t width, std::size_t hidden, std::size_t classes, Rng& rng)
    : l1_(width, hidden, rng), l2_(hidden, classes, rng) {}

template <typename T>
HeadOutputs<T> ClassifierHead<T>::forward(const BasicTensor<T>& sequence) const {
  return forward_pooled(mean_pool(sequence));
}

template <typename T>
HeadOutputs<T> ClassifierHead<T>::forward_pooled(const BasicTensor<T>& pooled) const {
  auto hidden = relu(l1_.forward(pooled));
  auto logits = l2_.forward(hidden);
  return {std::move(logits), std::move(hidden), pooled};
}

template <typename T>
void ClassifierHead<T>::collect(const std::string& prefix, nn::ParameterList<T>& out) const {
  l1_.collect(prefix + ".l1", out);
  l2_.collect(prefix + ".l2", out);
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, Rng& rng)
    : config_(config), encoder_norm_(config.hidden), counter_(std::make_unique<std::atomic<std::uint64_t>>(0)) {
  config_.validate();
  std::size_t in = 1;
  for (const auto& c : config_.encoder_convs) {
    convs_.emplace_back(in, c.out_channels, c.kernel, c.stride, rng);
    in = c.out_channels;
  }
  for (std::size_t j = 0; j < config_.num_layers; ++j)
    layers_.emplace_back(config_.hidden, config_.heads, config_.ff_dim, config_.dropout, rng);
}

template <typename T>
BasicTensor<T> Backbone<T>::feature_encode(const BasicTensor<T>& wave) const {
  if (wave.rank() != 2) throw ShapeError("waveform batch must be (B,S), got " + shape_str(wave.shape()));
  const std::size_t b = wave.dim(0), s = wave.dim(1);
  if (s < config_.min_input_length())
    throw ShapeError("input too short: " + std::to_string(s) + " samples, encoder needs at least " +
                     std::to_string(config_.min_input_length()));
  auto x = reshape(wave, {b, s, 1});
  for (const auto& conv : convs_) x = gelu(conv.forward(x));
  x = encoder_norm_.forward(x);

  // Sinusoidal positions, [F,R], broadcast over the batch.
  const std::size_t f = x.dim(1), r = config_.hidden;
  std::vector<T> pe(f * r);
  for (std::size_t t = 0; t < f; ++t)
    for (std::size_t i = 0; i < r; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(r));
      pe[t * r + i] = static_cast<T>(std::sin(static_cast<double>(t) * freq));
      if (i + 1 < r) pe[t * r + i + 1] = static_cast<T>(std::cos(static_cast<double>(t) * freq));
    }
  return add(x, BasicTensor<T>({f, r}, std::move(pe)));
}

template <typename T>
HiddenStates<T> Backbone<T>::forward_to_layer(const BasicTensor<T>& wave, std::size_t k,
                                              const std::set<std::size_t>& retain, Rng* rng) const {
  if (k < 1 || k > config_.num_layers)
    throw ShapeError("layer index " + std::to_string(k) + " outside [1," + std::to_string(config_.num_layers) + "]");
  for (auto j : retain)
    if (j < 1 || j > k) throw ShapeError("cannot retain layer " + std::to_string(j) + " when stopping at " + std::to_string(k));
  HiddenStates<T> states;
  auto x = feature_encode(wave);
  for (std::size_t j = 1; j <= k; ++j) {
    x = layers_[j - 1].forward(x, rng);
    counter_->fetch_add(1, std::memory_order_relaxed);
    if (retain.count(j)) states.activations.emplace(j, x);
  }
  states.computed = k;
  return states;
}

template <typename T>
void Backbone<T>::collect_encoder(nn::ParameterList<T>& out) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect("backbone.encoder.conv" + std::to_string(i), out);
  encoder_norm_.collect("backbone.encoder.norm", out);
}

template <typename T>
void Backbone<T>::collect_layer(std::size_t layer, nn::ParameterList<T>& out) const {
  layers_.at(layer - 1).collect("backbone.layer." + std::to_string(layer), out);
}

template <typename T>
void Backbone<T>::collect(nn::ParameterList<T>& out) const {
  collect_encoder(out);
  for (std::size_t j = 1; j <= layers_.size(); ++j) collect_layer(j, out);
}

std::uint64_t encoder_macs(const BackboneConfig& config, std::size_t samples) {
  std::uint64_t macs = 0;
  std::size_t len = samples, in = 1;
  for (const auto& c : config.encoder_convs) {
    if (len < c.kernel) return macs;
    len = (len - c.kernel) / c.stride + 1;
    macs += static_cast<std::uint64_t>(len) * c.kernel * in * c.out_channels;
    in = c.out_channels;
  }
  return macs;
}

std::uint64_t layer_macs(const BackboneConfig& config, std::size_t frames) {
  const std::uint64_t f = frames, r = config.hidden;
  const std::uint64_t proj = f * r * 3 * r + f * r * r;  // qkv + output
  const std::uint64_t attn = 2 * f * f * r;              // scores + context
  const std::uint64_t ff = 2 * f * r * config.ff_dim;
  return proj + attn + ff;
}

std::uint64_t head_macs(const BackboneConfig& config) {
  return static_cast<std::uint64_t>(config.hidden) * config.head_hidden +
         static_cast<std::uint64_t>(config.head_hidden) * config.num_classes;
}

template struct HiddenStates<float>;
template struct HiddenStates<double>;
template class ClassifierHead<float>;
template class ClassifierHead<double>;
template class Backbone<float>;
template class Backbone<double>;

}  // namespace exitwise
