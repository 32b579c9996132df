// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "exitwise/error.hpp"
#include "json.hpp"

namespace exitwise {

using json = nlohmann::ordered_json;

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::SelfDistill: return "self_distill";
    case TrainMode::Truncated: return "truncated";
    case TrainMode::Layerwise: return "layerwise";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& text) {
  if (text == "self_distill" || text == "self-distill") return TrainMode::SelfDistill;
  if (text == "truncated") return TrainMode::Truncated;
  if (text == "layerwise") return TrainMode::Layerwise;
  throw ConfigError("unknown train mode '" + text + "' (self_distill, truncated, layerwise)");
}

namespace {

json exit_to_json(const ExitSpec& e) {
  json j{{"layer", e.layer}, {"block", to_string(e.block)}};
  if (e.sim_level) j["sim_level"] = to_string(*e.sim_level);
  return j;
}

json to_json(const RunConfig& c) {
  const auto& b = c.model.backbone;
  json convs = json::array();
  for (const auto& cv : b.encoder_convs) convs.push_back({cv.out_channels, cv.kernel, cv.stride});
  json exits = json::array();
  for (const auto& e : c.model.exits) exits.push_back(exit_to_json(e));
  const auto& s = c.data.synth;
  const auto& t = c.train;
  return json{
      {"model",
       {{"encoder_convs", convs},
        {"num_layers", b.num_layers},
        {"hidden", b.hidden},
        {"heads", b.heads},
        {"ff_dim", b.ff_dim},
        {"head_hidden", b.head_hidden},
        {"num_classes", b.num_classes},
        {"dropout", b.dropout}}},
      {"exits", exits},
      {"loss",
       {{"alpha", c.loss.alpha},
        {"beta", c.loss.beta},
        {"gamma", c.loss.gamma},
        {"sim", to_string(c.loss.sim)},
        {"level", to_string(c.loss.level)},
        {"temperature", c.loss.temperature},
        {"detach_teacher", c.loss.detach_teacher}}},
      {"train",
       {{"mode", to_string(c.mode)},
        {"lr", t.lr},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"seed", t.seed},
        {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
        {"freeze_encoder", t.freeze_encoder},
        {"grad_clip", t.grad_clip ? json(*t.grad_clip) : json(nullptr)},
        {"keep_best_dev", t.keep_best_dev},
        {"log_timing", t.log_timing},
        {"init_checkpoint", c.init_checkpoint},
        {"truncate_layer", c.truncate_layer},
        {"student_depth", c.student_depth},
        {"predict_layers", c.predict_layers},
        {"refit_on_train_plus_dev", c.refit_on_train_plus_dev}}},
      {"data",
       {{"source", c.data.source},
        {"seed", s.seed},
        {"n_per_class", s.n_per_class},
        {"length", s.length},
        {"sample_rate", s.sample_rate},
        {"speakers", s.speakers},
        {"overlap", s.overlap},
        {"manifest", c.data.manifest},
        {"root", c.data.root},
        {"class_names", c.data.class_names},
        {"split", c.data.split},
        {"split_seed", c.data.split_seed},
        {"clip_length", c.data.clip_length}}},
      {"output",
       {{"dir", c.output.dir},
        {"checkpoint", c.output.checkpoint},
        {"log", c.output.log},
        {"catalog", c.output.catalog}}},
  };
}

/// Rejects keys of `doc` that `schema` lacks. Arrays of objects are checked
/// element-wise against `element_keys`.
void check_keys(const json& doc, const json& schema, const std::string& path) {
  if (!doc.is_object()) return;
  for (const auto& [key, value] : doc.items()) {
    const std::string dotted = path.empty() ? key : path + "." + key;
    if (!schema.is_object() || !schema.contains(key)) throw ConfigError("unknown config key '" + dotted + "'");
    if (dotted == "exits") {
      if (!value.is_array()) throw ConfigError("'exits' must be a list");
      static const std::set<std::string> allowed{"layer", "block", "sim_level"};
      for (std::size_t i = 0; i < value.size(); ++i) {
        if (!value[i].is_object()) throw ConfigError("exits[" + std::to_string(i) + "] must be an object");
        for (const auto& [k, v] : value[i].items()) {
          (void)v;
          if (!allowed.count(k)) throw ConfigError("unknown config key 'exits[" + std::to_string(i) + "]." + k + "'");
        }
      }
      continue;
    }
    if (value.is_object()) check_keys(value, schema.at(key), dotted);
  }
}

void merge(json& base, const json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object())
      merge(base[key], value);
    else
      base[key] = value;
  }
}

void apply_override(json& doc, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like section.key=value: '" + text + "'");
  const std::string key = text.substr(0, eq), raw = text.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
    if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
  }
  (*node)[parts.back()] = value;
}

template <typename V>
V get(const json& doc, const std::string& dotted) {
  const json* node = &doc;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) node = &node->at(part);
  try {
    return node->get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + dotted + "' has the wrong type: " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  train.validate();
  const std::size_t n = model.backbone.num_layers;
  if (mode == TrainMode::Truncated && (truncate_layer < 1 || truncate_layer > n))
    throw ConfigError("train.truncate_layer must lie in 1.." + std::to_string(n));
  if (mode == TrainMode::Layerwise) {
    if (student_depth < 1 || student_depth > n) throw ConfigError("train.student_depth must lie in 1.." + std::to_string(n));
    for (auto l : predict_layers)
      if (l < 1 || l > n) throw ConfigError("train.predict_layers entries must lie in 1.." + std::to_string(n));
  }
  if (data.source != "synth" && data.source != "wav-manifest")
    throw ConfigError("data.source must be synth or wav-manifest, got '" + data.source + "'");
  if (data.source == "wav-manifest" && data.manifest.empty())
    throw ConfigError("data.manifest is required when data.source is wav-manifest");
  if (data.clip_length < model.backbone.min_input_length())
    throw ConfigError("data.clip_length " + std::to_string(data.clip_length) + " is shorter than the encoder needs (" +
                      std::to_string(model.backbone.min_input_length()) + ")");
  if (data.class_names.size() != model.backbone.num_classes && data.source == "wav-manifest")
    throw ConfigError("data.class_names must list model.num_classes names");
  if (data.source == "synth" && data.synth.classes != model.backbone.num_classes)
    throw ConfigError("synthetic corpus classes must equal model.num_classes");
}

void RunConfig::check_paths() const {
  if (!init_checkpoint.empty() && !std::filesystem::is_regular_file(init_checkpoint))
    throw ConfigError("train.init_checkpoint '" + init_checkpoint + "' does not exist");
  if (data.source == "wav-manifest" && !std::filesystem::is_regular_file(data.manifest))
    throw ConfigError("data.manifest '" + data.manifest + "' does not exist");
}

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& o : overrides) apply_override(user, o);

  const RunConfig defaults;
  json doc = to_json(defaults);
  check_keys(user, doc, "");
  merge(doc, user);

  RunConfig c;
  auto& b = c.model.backbone;
  b.encoder_convs.clear();
  for (const auto& cv : doc.at("model").at("encoder_convs")) {
    if (!cv.is_array() || cv.size() != 3) throw ConfigError("model.encoder_convs entries are [out, kernel, stride]");
    try {
      b.encoder_convs.push_back({cv[0].get<std::size_t>(), cv[1].get<std::size_t>(), cv[2].get<std::size_t>()});
    } catch (const json::exception& e) {
      throw ConfigError(std::string("model.encoder_convs: ") + e.what());
    }
  }
  b.num_layers = get<std::size_t>(doc, "model.num_layers");
  b.hidden = get<std::size_t>(doc, "model.hidden");
  b.heads = get<std::size_t>(doc, "model.heads");
  b.ff_dim = get<std::size_t>(doc, "model.ff_dim");
  b.head_hidden = get<std::size_t>(doc, "model.head_hidden");
  b.num_classes = get<std::size_t>(doc, "model.num_classes");
  b.dropout = get<double>(doc, "model.dropout");

  c.model.exits.clear();
  const auto& exits = doc.at("exits");
  if (!exits.is_array()) throw ConfigError("'exits' must be a list");
  for (std::size_t i = 0; i < exits.size(); ++i) {
    const auto& e = exits[i];
    const std::string where = "exits[" + std::to_string(i) + "]";
    if (!e.contains("layer")) throw ConfigError(where + ".layer is required");
    ExitSpec spec;
    spec.layer = get<std::size_t>(e, "layer");
    spec.block = e.contains("block") ? parse_block_kind(get<std::string>(e, "block")) : BlockKind::Conv1x1;
    if (e.contains("sim_level")) spec.sim_level = parse_sim_level(get<std::string>(e, "sim_level"));
    c.model.exits.push_back(spec);
  }

  c.loss.alpha = get<double>(doc, "loss.alpha");
  c.loss.beta = get<double>(doc, "loss.beta");
  c.loss.gamma = get<double>(doc, "loss.gamma");
  c.loss.sim = parse_sim_kind(get<std::string>(doc, "loss.sim"));
  c.loss.level = parse_sim_level(get<std::string>(doc, "loss.level"));
  c.loss.temperature = get<double>(doc, "loss.temperature");
  c.loss.detach_teacher = get<bool>(doc, "loss.detach_teacher");

  auto& t = c.train;
  c.mode = parse_train_mode(get<std::string>(doc, "train.mode"));
  t.lr = get<double>(doc, "train.lr");
  const auto epochs = get<long long>(doc, "train.epochs");
  const auto batch = get<long long>(doc, "train.batch_size");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch < 1) throw ConfigError("train.batch_size must be at least 1");
  t.epochs = static_cast<std::size_t>(epochs);
  t.batch_size = static_cast<std::size_t>(batch);
  t.seed = get<std::uint64_t>(doc, "train.seed");
  t.adam.beta1 = get<double>(doc, "train.adam.beta1");
  t.adam.beta2 = get<double>(doc, "train.adam.beta2");
  t.adam.eps = get<double>(doc, "train.adam.eps");
  t.freeze_encoder = get<bool>(doc, "train.freeze_encoder");
  if (!doc.at("train").at("grad_clip").is_null()) t.grad_clip = get<double>(doc, "train.grad_clip");
  t.keep_best_dev = get<bool>(doc, "train.keep_best_dev");
  t.log_timing = get<bool>(doc, "train.log_timing");
  t.weights = c.loss;
  c.init_checkpoint = get<std::string>(doc, "train.init_checkpoint");
  c.truncate_layer = get<std::size_t>(doc, "train.truncate_layer");
  c.student_depth = get<std::size_t>(doc, "train.student_depth");
  c.predict_layers = get<std::vector<std::size_t>>(doc, "train.predict_layers");
  c.refit_on_train_plus_dev = get<bool>(doc, "train.refit_on_train_plus_dev");

  auto& d = c.data;
  d.source = get<std::string>(doc, "data.source");
  d.synth.seed = get<std::uint64_t>(doc, "data.seed");
  d.synth.n_per_class = get<std::size_t>(doc, "data.n_per_class");
  d.synth.length = get<std::size_t>(doc, "data.length");
  d.synth.sample_rate = get<int>(doc, "data.sample_rate");
  d.synth.speakers = get<std::size_t>(doc, "data.speakers");
  d.synth.overlap = get<double>(doc, "data.overlap");
  d.synth.classes = b.num_classes;
  d.manifest = get<std::string>(doc, "data.manifest");
  d.root = get<std::string>(doc, "data.root");
  d.class_names = get<std::vector<std::string>>(doc, "data.class_names");
  d.split = get<std::array<double, 3>>(doc, "data.split");
  d.split_seed = get<std::uint64_t>(doc, "data.split_seed");
  d.clip_length = get<std::size_t>(doc, "data.clip_length");

  c.output.dir = get<std::string>(doc, "output.dir");
  c.output.checkpoint = get<std::string>(doc, "output.checkpoint");
  c.output.log = get<std::string>(doc, "output.log");
  c.output.catalog = get<std::string>(doc, "output.catalog");

  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), overrides);
}

std::string dump_run_config(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

}  // namespace exitwise
