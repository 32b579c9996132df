// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/exits.hpp"

#include <algorithm>
#include <sstream>

#include "exitwise/error.hpp"

namespace exitwise {

std::uint32_t fnv1a32(std::string_view text) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : text) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

void ModelConfig::validate() const {
  backbone.validate();
  std::size_t prev = 0;
  for (const auto& e : exits) {
    if (e.layer == 0) throw ConfigError("exit layer indices start at 1");
    if (e.layer >= backbone.num_layers)
      throw ConfigError("exit at layer " + std::to_string(e.layer) + " is not shallower than the teacher (N=" +
                        std::to_string(backbone.num_layers) + ")");
    if (e.layer == prev) throw ConfigError("duplicate exit at layer " + std::to_string(e.layer));
    if (e.layer < prev) throw ConfigError("exit layers must be strictly increasing");
    prev = e.layer;
  }
}

std::uint32_t ModelConfig::architecture_hash() const {
  std::ostringstream os;
  os << "multi-exit;" << backbone.describe() << ";exits=";
  for (const auto& e : exits) os << e.layer << ':' << to_string(e.block) << ',';
  return fnv1a32(os.str());
}

namespace {

template <typename T>
class PointwiseConvBlock final : public ExitBlock<T> {
 public:
  PointwiseConvBlock(std::size_t width, Rng& rng) : proj_(width, width, rng), width_(width) {}
  BasicTensor<T> forward(const BasicTensor<T>& x) const override { return proj_.forward(x); }
  void collect(const std::string& prefix, nn::ParameterList<T>& out) const override { proj_.collect(prefix, out); }
  std::uint64_t macs(std::size_t frames) const override {
    return static_cast<std::uint64_t>(frames) * width_ * width_;
  }

 private:
  nn::Linear<T> proj_;
  std::size_t width_;
};

template <typename T>
class ScalarConvBlock final : public ExitBlock<T> {
 public:
  explicit ScalarConvBlock(Rng& rng)
      : weight_(nn::uniform_parameter<T>({1}, 1.0, rng)), bias_(nn::uniform_parameter<T>({1}, 1.0, rng)) {}
  BasicTensor<T> forward(const BasicTensor<T>& x) const override { return add(mul(x, weight_), bias_); }
  void collect(const std::string& prefix, nn::ParameterList<T>& out) const override {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }
  std::uint64_t macs(std::size_t) const override { return 0; }

 private:
  BasicTensor<T> weight_, bias_;
};

template <typename T>
class LstmBlock final : public ExitBlock<T> {
 public:
  LstmBlock(std::size_t width, Rng& rng) : cell_(width, width, rng), width_(width) {}
  BasicTensor<T> forward(const BasicTensor<T>& x) const override { return cell_.forward(x); }
  void collect(const std::string& prefix, nn::ParameterList<T>& out) const override { cell_.collect(prefix, out); }
  std::uint64_t macs(std::size_t frames) const override {
    return static_cast<std::uint64_t>(frames) * 8 * width_ * width_;
  }

 private:
  nn::Lstm<T> cell_;
  std::size_t width_;
};

template <typename T>
class GruBlock final : public ExitBlock<T> {
 public:
  GruBlock(std::size_t width, Rng& rng) : cell_(width, width, rng), width_(width) {}
  BasicTensor<T> forward(const BasicTensor<T>& x) const override { return cell_.forward(x); }
  void collect(const std::string& prefix, nn::ParameterList<T>& out) const override { cell_.collect(prefix, out); }
  std::uint64_t macs(std::size_t frames) const override {
    return static_cast<std::uint64_t>(frames) * 6 * width_ * width_;
  }

 private:
  nn::Gru<T> cell_;
  std::size_t width_;
};

// Per-exit init stream: depends only on the model seed and the exit's
// identity, so adding or removing other exits leaves it unchanged.
std::uint64_t exit_seed(std::uint64_t seed, const ExitSpec& spec) {
  return seed * 0x100000001b3ULL ^ fnv1a32("exit:" + std::to_string(spec.layer) + ":" + to_string(spec.block));
}

}  // namespace

template <typename T>
std::unique_ptr<ExitBlock<T>> make_block(BlockKind kind, std::size_t width, Rng& rng) {
  switch (kind) {
    case BlockKind::Conv1x1: return std::make_unique<PointwiseConvBlock<T>>(width, rng);
    case BlockKind::Conv1x1Scalar: return std::make_unique<ScalarConvBlock<T>>(rng);
    case BlockKind::Lstm: return std::make_unique<LstmBlock<T>>(width, rng);
    case BlockKind::Gru: return std::make_unique<GruBlock<T>>(width, rng);
  }
  throw ConfigError("unknown block kind");
}

template <typename T>
ExitBranch<T>::ExitBranch(const ExitSpec& spec, const BackboneConfig& backbone, Rng& rng)
    : spec_(spec),
      block_(make_block<T>(spec.block, backbone.hidden, rng)),
      head_(backbone.hidden, backbone.head_hidden, backbone.num_classes, rng) {}

template <typename T>
ExitOutputs<T> ExitBranch<T>::forward(const BasicTensor<T>& activation) const {
  auto out = head_.forward(block_->forward(activation));
  return {std::move(out.logits), std::move(out.pooled), std::move(out.hidden)};
}

template <typename T>
std::string ExitBranch<T>::prefix() const {
  return "exit." + std::to_string(spec_.layer) + "." + to_string(spec_.block);
}

template <typename T>
void ExitBranch<T>::collect(nn::ParameterList<T>& out) const {
  block_->collect(prefix() + ".block", out);
  head_.collect(prefix() + ".head", out);
}

template <typename T>
std::uint64_t ExitBranch<T>::macs(std::size_t frames) const {
  return block_->macs(frames);
}

template <typename T>
ExitInfo ExitModel<T>::info(const std::string& id) const {
  for (const auto& e : exit_infos())
    if (e.id == id) return e;
  throw ConfigError("unknown exit '" + id + "'");
}

// ---------------------------------------------------------------------------

template <typename T>
MultiExitModel<T>::MultiExitModel(const ModelConfig& config, std::uint64_t seed)
    : config_((config.validate(), config)),
      backbone_([&] {
        Rng rng(seed);
        return Backbone<T>(config.backbone, rng);
      }()),
      head_([&] {
        Rng rng(seed ^ 0x5ca1ab1eULL);
        return ClassifierHead<T>(config.backbone.hidden, config.backbone.head_hidden, config.backbone.num_classes,
                                 rng);
      }()) {
  for (const auto& spec : config_.exits) {
    Rng rng(exit_seed(seed, spec));
    exits_.emplace_back(spec, config_.backbone, rng);
  }
}

template <typename T>
ForwardOutputs<T> MultiExitModel<T>::forward(const BasicTensor<T>& wave, Rng* dropout_rng) const {
  std::set<std::size_t> retain{config_.backbone.num_layers};
  for (const auto& e : config_.exits) retain.insert(e.layer);
  const auto states = backbone_.forward_to_layer(wave, config_.backbone.num_layers, retain, dropout_rng);
  auto head = head_.forward(states.at(config_.backbone.num_layers));
  ForwardOutputs<T> out{std::move(head.logits), std::move(head.pooled), std::move(head.hidden), {}};
  out.exits.reserve(exits_.size());
  for (const auto& branch : exits_) out.exits.push_back(branch.forward(states.at(branch.spec().layer)));
  return out;
}

template <typename T>
std::vector<ExitInfo> MultiExitModel<T>::exit_infos() const {
  std::vector<ExitInfo> infos;
  for (const auto& e : config_.exits) infos.push_back({e.id(), e.layer, false});
  infos.push_back({"teacher", config_.backbone.num_layers, true});
  return infos;
}

template <typename T>
std::vector<BasicTensor<T>> MultiExitModel<T>::all_logits(const BasicTensor<T>& wave) const {
  auto out = forward(wave);
  std::vector<BasicTensor<T>> logits;
  for (auto& e : out.exits) logits.push_back(e.logits);
  logits.push_back(out.logits);
  return logits;
}

template <typename T>
BasicTensor<T> MultiExitModel<T>::logits_at(const BasicTensor<T>& wave, const std::string& id) const {
  if (id == "teacher") {
    const std::size_t n = config_.backbone.num_layers;
    return head_.forward(backbone_.forward_to_layer(wave, n, {n}).at(n)).logits;
  }
  for (const auto& branch : exits_) {
    if (branch.spec().id() != id) continue;
    const std::size_t k = branch.spec().layer;
    return branch.forward(backbone_.forward_to_layer(wave, k, {k}).at(k)).logits;
  }
  throw ConfigError("unknown exit '" + id + "'");
}

template <typename T>
nn::ParameterList<T> MultiExitModel<T>::teacher_parameters() const {
  nn::ParameterList<T> out;
  backbone_.collect(out);
  head_.collect("head", out);
  return out;
}

template <typename T>
nn::ParameterList<T> MultiExitModel<T>::parameters() const {
  auto out = teacher_parameters();
  for (const auto& branch : exits_) branch.collect(out);
  return out;
}

template <typename T>
nn::ParameterList<T> MultiExitModel<T>::exit_parameters(const std::string& id) const {
  nn::ParameterList<T> out;
  if (id == "teacher") return teacher_parameters();
  for (const auto& branch : exits_) {
    if (branch.spec().id() != id) continue;
    backbone_.collect_encoder(out);
    for (std::size_t j = 1; j <= branch.spec().layer; ++j) backbone_.collect_layer(j, out);
    branch.collect(out);
    return out;
  }
  throw ConfigError("unknown exit '" + id + "'");
}

template <typename T>
std::uint64_t MultiExitModel<T>::clip_macs(const std::string& id, std::size_t samples) const {
  const auto& bc = config_.backbone;
  const std::size_t frames = bc.frames_for(samples);
  const auto e = this->info(id);
  std::uint64_t macs = encoder_macs(bc, samples) + e.layer * layer_macs(bc, frames) + head_macs(bc);
  if (!e.teacher)
    for (const auto& branch : exits_)
      if (branch.spec().id() == id) macs += branch.macs(frames);
  return macs;
}

// ---------------------------------------------------------------------------

template <typename T>
TruncatedModel<T>::TruncatedModel(const BackboneConfig& config, std::size_t depth, std::uint64_t seed)
    : depth_(depth),
      backbone_([&] {
        Rng rng(seed);
        return Backbone<T>(config, rng);
      }()),
      head_([&] {
        Rng rng(seed ^ 0x7a11c0deULL ^ depth);
        return ClassifierHead<T>(config.hidden, config.head_hidden, config.num_classes, rng);
      }()) {
  if (depth < 1 || depth > config.num_layers)
    throw ConfigError("truncation depth " + std::to_string(depth) + " outside [1," +
                      std::to_string(config.num_layers) + "]");
}

template <typename T>
std::uint32_t TruncatedModel<T>::hash_for(const BackboneConfig& config, std::size_t depth) {
  return fnv1a32("truncated;" + config.describe() + ";k=" + std::to_string(depth));
}

template <typename T>
HeadOutputs<T> TruncatedModel<T>::forward(const BasicTensor<T>& wave, Rng* dropout_rng) const {
  return head_.forward(backbone_.forward_to_layer(wave, depth_, {depth_}, dropout_rng).at(depth_));
}

template <typename T>
std::vector<ExitInfo> TruncatedModel<T>::exit_infos() const {
  return {{"layer" + std::to_string(depth_), depth_, false}};
}

template <typename T>
std::vector<BasicTensor<T>> TruncatedModel<T>::all_logits(const BasicTensor<T>& wave) const {
  return {forward(wave).logits};
}

template <typename T>
BasicTensor<T> TruncatedModel<T>::logits_at(const BasicTensor<T>& wave, const std::string& id) const {
  if (id != exit_infos()[0].id) throw ConfigError("unknown exit '" + id + "'");
  return forward(wave).logits;
}

template <typename T>
nn::ParameterList<T> TruncatedModel<T>::active_parameters() const {
  nn::ParameterList<T> out;
  backbone_.collect_encoder(out);
  for (std::size_t j = 1; j <= depth_; ++j) backbone_.collect_layer(j, out);
  head_.collect("head", out);
  return out;
}

template <typename T>
nn::ParameterList<T> TruncatedModel<T>::frozen_parameters() const {
  nn::ParameterList<T> out;
  for (std::size_t j = depth_ + 1; j <= backbone_.config().num_layers; ++j) backbone_.collect_layer(j, out);
  return out;
}

template <typename T>
nn::ParameterList<T> TruncatedModel<T>::parameters() const {
  nn::ParameterList<T> out;
  backbone_.collect(out);
  head_.collect("head", out);
  return out;
}

template <typename T>
nn::ParameterList<T> TruncatedModel<T>::exit_parameters(const std::string& id) const {
  if (id != exit_infos()[0].id) throw ConfigError("unknown exit '" + id + "'");
  return active_parameters();
}

template <typename T>
std::uint64_t TruncatedModel<T>::clip_macs(const std::string& id, std::size_t samples) const {
  if (id != exit_infos()[0].id) throw ConfigError("unknown exit '" + id + "'");
  const auto& bc = backbone_.config();
  return encoder_macs(bc, samples) + depth_ * layer_macs(bc, bc.frames_for(samples)) + head_macs(bc);
}

template std::unique_ptr<ExitBlock<float>> make_block<float>(BlockKind, std::size_t, Rng&);
template std::unique_ptr<ExitBlock<double>> make_block<double>(BlockKind, std::size_t, Rng&);
template class ExitBranch<float>;
template class ExitBranch<double>;
template class ExitModel<float>;
template class ExitModel<double>;
template class MultiExitModel<float>;
template class MultiExitModel<double>;
template class TruncatedModel<float>;
template class TruncatedModel<double>;

}  // namespace exitwise
