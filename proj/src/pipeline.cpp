// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "exitwise/error.hpp"
#include "exitwise/kernels.hpp"

namespace exitwise {

Split load_split(const RunConfig& c) {
  Corpus corpus;
  if (c.data.source == "synth") {
    corpus = synth_corpus(c.data.synth);
  } else {
    const std::filesystem::path manifest(c.data.manifest);
    const std::filesystem::path root = c.data.root.empty() ? manifest.parent_path() : std::filesystem::path(c.data.root);
    corpus = ingest_manifest(manifest, root, c.data.class_names);
    const int rate = c.data.synth.sample_rate;
    for (const auto& clip : corpus)
      if (clip.sample_rate != rate)
        throw DataError(DataError::Kind::SampleRateMismatch,
                        "clip sampled at " + std::to_string(clip.sample_rate) + " Hz, data.sample_rate is " +
                            std::to_string(rate) + " Hz (no resampling is done)");
  }
  return split_speaker_disjoint(corpus, c.data.split, c.data.split_seed);
}

std::unique_ptr<ExitModel<float>> make_model(const RunConfig& c) {
  switch (c.mode) {
    case TrainMode::SelfDistill: return std::make_unique<MultiExitModel<float>>(c.model, c.train.seed);
    case TrainMode::Truncated:
      return std::make_unique<TruncatedModel<float>>(c.model.backbone, c.truncate_layer, c.train.seed);
    case TrainMode::Layerwise:
      return std::make_unique<TruncatedModel<float>>(c.model.backbone, c.student_depth, c.train.seed);
  }
  throw ConfigError("unknown train mode");
}

std::size_t init_from_records(const std::vector<TensorRecord>& records, const nn::ParameterList<float>& params,
                              bool backbone_only) {
  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  std::vector<TensorRecord> chosen;
  nn::ParameterList<float> targets;
  for (const auto& p : params) {
    if (backbone_only && p.name.rfind("backbone.", 0) != 0) continue;
    const auto it = by_name.find(p.name);
    if (it == by_name.end() || it->second->shape != p.tensor.shape()) continue;
    chosen.push_back(*it->second);
    targets.push_back(p);
  }
  return assign_parameters(chosen, targets, true);
}

TrainOutcome run_training(const RunConfig& c, const TrainHooks& hooks) {
  c.validate();
  c.check_paths();
  Split split = load_split(c);
  TrainData data;
  data.train = std::move(split.train);
  data.dev = std::move(split.dev);
  if (c.refit_on_train_plus_dev) {
    data.train.insert(data.train.end(), data.dev.begin(), data.dev.end());
  }
  data.clip_length = c.data.clip_length;
  data.sample_rate = c.data.synth.sample_rate;

  std::vector<TensorRecord> init;
  if (!c.init_checkpoint.empty()) init = read_container(c.init_checkpoint).tensors;

  TrainConfig tc = c.train;
  tc.weights = c.loss;
  TrainOutcome out;
  switch (c.mode) {
    case TrainMode::SelfDistill: {
      auto model = std::make_unique<MultiExitModel<float>>(c.model, c.train.seed);
      init_from_records(init, model->parameters(), true);
      out.log = fit_self_distill(*model, data, tc, hooks);
      out.model = std::move(model);
      break;
    }
    case TrainMode::Truncated: {
      auto model = std::make_unique<TruncatedModel<float>>(c.model.backbone, c.truncate_layer, c.train.seed);
      init_from_records(init, model->parameters(), true);
      out.log = fine_tune_truncated(*model, data, tc, hooks);
      out.model = std::move(model);
      break;
    }
    case TrainMode::Layerwise: {
      ModelConfig teacher_config = c.model;
      teacher_config.exits.clear();
      MultiExitModel<float> teacher(teacher_config, c.train.seed);
      init_from_records(init, teacher.parameters(), true);
      const auto layers =
          c.predict_layers.empty() ? default_predict_layers(c.model.backbone.num_layers) : c.predict_layers;
      auto res = layerwise_distill(teacher, c.student_depth, layers, data, tc, hooks);
      out.log = std::move(res.log);
      out.model = std::make_unique<TruncatedModel<float>>(std::move(res.student));
      break;
    }
  }
  return out;
}

std::unique_ptr<ExitModel<float>> load_trained(const RunConfig& c, const std::filesystem::path& checkpoint) {
  auto model = make_model(c);
  load_checkpoint_into(checkpoint, *model);
  return model;
}

SweepAxis parse_sweep_axis(const std::string& text) {
  if (text == "exits") return SweepAxis::Exits;
  if (text == "blocks") return SweepAxis::Blocks;
  if (text == "simloss") return SweepAxis::SimLoss;
  throw ConfigError("unknown sweep axis '" + text + "' (exits, blocks, simloss)");
}

std::vector<SweepPoint> sweep_grid(const RunConfig& base, const std::vector<SweepAxis>& axes) {
  if (axes.empty()) throw ConfigError("sweep needs at least one axis");
  std::vector<SweepPoint> grid(1);
  grid[0].config = base;
  grid[0].block = base.model.exits.empty() ? "-" : to_string(base.model.exits.front().block);
  grid[0].loss = to_string(base.loss.sim);
  for (auto axis : axes) {
    std::vector<SweepPoint> next;
    for (const auto& p : grid) {
      switch (axis) {
        case SweepAxis::Exits: {
          const BlockKind block = p.config.model.exits.empty() ? BlockKind::Conv1x1 : p.config.model.exits.front().block;
          for (std::size_t l = 1; l < base.model.backbone.num_layers; ++l) {
            SweepPoint q = p;
            q.config.model.exits = {{l, block, std::nullopt}};
            q.overrides.push_back("exits=[{\"layer\":" + std::to_string(l) + "}]");
            next.push_back(std::move(q));
          }
          break;
        }
        case SweepAxis::Blocks:
          for (BlockKind k : {BlockKind::Conv1x1, BlockKind::Lstm, BlockKind::Gru}) {
            SweepPoint q = p;
            for (auto& e : q.config.model.exits) e.block = k;
            q.block = to_string(k);
            q.overrides.push_back("exits.*.block=" + to_string(k));
            next.push_back(std::move(q));
          }
          break;
        case SweepAxis::SimLoss:
          for (SimKind k : {SimKind::L1, SimKind::L2, SimKind::Cosine, SimKind::L1Cosine, SimKind::L2Cosine}) {
            SweepPoint q = p;
            q.config.loss.sim = k;
            q.config.train.weights.sim = k;
            q.loss = to_string(k);
            q.overrides.push_back("loss.sim=" + to_string(k));
            next.push_back(std::move(q));
          }
          break;
      }
    }
    grid = std::move(next);
  }
  for (auto& p : grid) p.config.validate();
  return grid;
}

std::vector<SweepResult> run_sweep(const std::vector<SweepPoint>& grid, std::size_t threads) {
  std::vector<SweepResult> results(grid.size());
  std::vector<std::exception_ptr> errors(grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    kernels::set_num_threads(1);
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      try {
        const auto& c = grid[i].config;
        auto outcome = run_training(c);
        const Split split = load_split(c);
        const int rate = c.data.synth.sample_rate;
        const auto dev = evaluate(*outcome.model, split.dev, c.data.clip_length, rate);
        const auto test = evaluate(*outcome.model, split.test, c.data.clip_length, rate);
        SweepResult r;
        r.block = grid[i].block;
        r.loss = grid[i].loss;
        for (std::size_t e = 0; e < dev.exits.size(); ++e) {
          r.exit_ids.push_back(dev.exits[e].id);
          r.dev_uar.push_back(dev.exits[e].uar);
          r.test_uar.push_back(test.exits[e].uar);
        }
        if (dev.fusion) r.dev_fusion = dev.fusion->uar;
        if (test.fusion) r.test_fusion = test.fusion->uar;
        r.parameter_total = nn::count_scalars(outcome.model->parameters());
        results[i] = std::move(r);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, grid.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

}  // namespace exitwise
