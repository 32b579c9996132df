// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "exitwise/error.hpp"
#include "exitwise/trainer.hpp"
#include "values.hpp"

using namespace exitwise;
using exitwise::testing::values;

namespace {

ModelConfig tiny(std::vector<ExitSpec> exits = {{1, BlockKind::Conv1x1, std::nullopt}}) {
  ModelConfig m;
  m.backbone.encoder_convs = {{8, 4, 4}};
  m.backbone.num_layers = 3;
  m.backbone.hidden = 8;
  m.backbone.heads = 2;
  m.backbone.ff_dim = 16;
  m.backbone.head_hidden = 8;
  m.backbone.num_classes = 7;
  m.exits = std::move(exits);
  return m;
}

// Class c is a fixed-phase sinusoid at (c+1)/16 cycles per sample plus small
// noise: each class is a distinct template, so the set is linearly separable.
Corpus separable(std::size_t n_per_class, std::uint64_t seed, std::size_t length = 16) {
  Rng rng(seed);
  Corpus c;
  for (std::size_t i = 0; i < n_per_class * 7; ++i) {
    LabeledClip clip;
    clip.label = static_cast<int>(i % 7);
    clip.sample_rate = 1600;
    clip.speaker_id = "s" + std::to_string(i % 5);
    for (std::size_t t = 0; t < length; ++t)
      clip.samples.push_back(static_cast<float>(
          0.8 * std::sin(2.0 * 3.141592653589793 * (clip.label + 1) * static_cast<double>(t) / 16.0) +
          rng.uniform(-0.02, 0.02)));
    c.push_back(std::move(clip));
  }
  return c;
}

TrainData data(std::size_t n_per_class = 100) { return {separable(n_per_class, 1), separable(5, 2), 16, 1600}; }

TrainConfig quick(std::size_t epochs = 1, double lr = 1e-3) {
  TrainConfig c;
  c.lr = lr;
  c.epochs = epochs;
  c.seed = 3;
  c.log_timing = false;
  return c;
}

}  // namespace

TEST_CASE("defaults follow the reference hyperparameters") {
  const TrainConfig c;
  CHECK(c.lr == 3e-5);
  CHECK(c.epochs == 20);
  CHECK(c.batch_size == 16);
  CHECK(c.weights.alpha == 1.0);
  CHECK(c.weights.beta == 1.0);
  CHECK(c.weights.gamma == 1.0);
  CHECK(c.adam.beta1 == 0.9);
  CHECK(c.adam.beta2 == 0.999);
  CHECK(c.adam.eps == 1e-8);
}

TEST_CASE("config validation rejects degenerate settings") {
  auto c = quick();
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick();
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("one epoch on separable data lowers the loss") {
  MultiExitModel<float> model(tiny(), 1);
  std::vector<double> totals;
  TrainHooks hooks;
  hooks.on_step = [&](std::size_t, std::size_t, const LossReport& r) {
    totals.push_back(r.total);
    CHECK(std::abs(r.reconstructed(LossWeights{}) - r.total) <= 1e-5 * std::max(1.0, std::abs(r.total)));
  };
  const auto log = fit_self_distill(model, data(), quick(), hooks);
  REQUIRE(totals.size() == 44);
  CHECK(totals.back() < totals.front());
  REQUIRE(log.epochs.size() == 1);
  CHECK(log.epochs[0].phase == "joint");
  CHECK(log.epochs[0].steps == 44);
  CHECK(log.epochs[0].dev_uar.count("layer1") == 1);
  CHECK(log.epochs[0].dev_uar.count("teacher") == 1);
}

TEST_CASE("training is reproducible for a fixed seed") {
  MultiExitModel<float> a(tiny(), 1), b(tiny(), 1);
  const auto la = fit_self_distill(a, data(20), quick(2));
  const auto lb = fit_self_distill(b, data(20), quick(2));
  std::ostringstream sa, sb;
  la.write_jsonl(sa, false);
  lb.write_jsonl(sb, false);
  CHECK(sa.str() == sb.str());
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(values(pa[i].tensor) == values(pb[i].tensor));
}

TEST_CASE("log lines carry timing only on request") {
  EpochRecord r;
  r.epoch = 1;
  r.phase = "joint";
  r.seconds = 1.5;
  CHECK(TrainLog::to_json_line(r, true).find("seconds") != std::string::npos);
  CHECK(TrainLog::to_json_line(r, false).find("seconds") == std::string::npos);
}

TEST_CASE("non-finite loss aborts with the offending term named") {
  auto d = data(5);
  d.train[0].samples[0] = std::numeric_limits<float>::quiet_NaN();
  MultiExitModel<float> model(tiny(), 1);
  try {
    auto c = quick();
    c.batch_size = 35;
    fit_self_distill(model, d, c);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    MESSAGE(std::string(e.what()));
    CHECK(std::string(e.what()).find("teacher") != std::string::npos);
    CHECK(e.exit_code() == 3);
  }
}

TEST_CASE("truncated fine-tuning never touches layers past k") {
  TruncatedModel<float> model(tiny().backbone, 1, 2);
  const auto frozen_before = snapshot(model.frozen_parameters());
  auto c = quick();
  c.freeze_encoder = true;
  const auto enc_before = snapshot(model.active_parameters());
  const auto log = fine_tune_truncated(model, data(10), c);
  CHECK(log.count("finetune") == 1);
  const auto frozen_after = snapshot(model.frozen_parameters());
  for (std::size_t i = 0; i < frozen_before.size(); ++i) CHECK(frozen_before[i].data == frozen_after[i].data);
  for (const auto& p : model.frozen_parameters()) CHECK_FALSE(p.tensor.has_grad());
  const auto after = snapshot(model.active_parameters());
  for (std::size_t i = 0; i < after.size(); ++i) {
    CAPTURE(after[i].name);
    if (after[i].name.rfind("backbone.encoder.", 0) == 0) CHECK(after[i].data == enc_before[i].data);
  }
}

TEST_CASE("truncation depth orders parameter counts") {
  const auto bc = tiny().backbone;
  const auto n1 = nn::count_scalars(TruncatedModel<float>(bc, 1, 0).active_parameters());
  const auto n2 = nn::count_scalars(TruncatedModel<float>(bc, 2, 0).active_parameters());
  const auto n3 = nn::count_scalars(TruncatedModel<float>(bc, 3, 0).active_parameters());
  CHECK(n1 < n2);
  CHECK(n2 < n3);
}

TEST_CASE("layer-wise distillation: frozen teacher, two phases, regression improves") {
  ModelConfig tc = tiny({});
  MultiExitModel<float> teacher(tc, 4);
  const auto before = snapshot(teacher.parameters());
  CHECK(default_predict_layers(6) == std::vector<std::size_t>{2, 4, 6});
  CHECK(default_predict_layers(3) == std::vector<std::size_t>{1, 2, 3});
  auto res = layerwise_distill(teacher, 1, default_predict_layers(3), data(20), quick(3));
  CHECK(res.log.count("regress") == 3);
  CHECK(res.log.count("classify") == 3);
  CHECK(res.log.epochs.size() == 6);
  for (std::size_t i = 0; i < res.log.epochs.size(); ++i) CHECK(res.log.epochs[i].epoch == i + 1);
  CHECK(res.log.epochs[2].loss.sim < res.log.epochs[0].loss.sim);
  CHECK(res.predictors.size() == 3);
  const auto after = snapshot(teacher.parameters());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].data == after[i].data);
  for (const auto& p : teacher.parameters()) CHECK_FALSE(p.tensor.has_grad());
  CHECK_THROWS_AS(layerwise_distill(teacher, 1, {}, data(5), quick()), ConfigError);
}

TEST_CASE("evaluation of a constant predictor gives 100/7") {
  MultiExitModel<float> model(tiny(), 5);
  auto& head = model.head();
  for (auto& w : head.l2().weight().mutable_data()) w = 0.f;
  for (auto& b : head.l2().bias().mutable_data()) b = 0.f;
  head.l2().bias().mutable_data()[3] = 1.f;
  const auto d = data(10);
  const auto m = evaluate(model, d.train, 16, 1600, {"teacher"}, false);
  CHECK(m.at("teacher").uar == doctest::Approx(100.0 / 7.0));
  CHECK_FALSE(m.fusion.has_value());
  const auto again = evaluate(model, d.train, 16, 1600);
  const auto twice = evaluate(model, d.train, 16, 1600);
  CHECK(again.at("layer1").uar == twice.at("layer1").uar);
  CHECK(again.fusion->uar == twice.fusion->uar);
  CHECK_THROWS_AS(evaluate(model, Corpus{}, 16, 1600), DataError);
}

TEST_CASE("joint training improves every exit on an easy task") {
  MultiExitModel<float> model(tiny({{1, BlockKind::Conv1x1, std::nullopt}, {2, BlockKind::Gru, std::nullopt}}), 6);
  fit_self_distill(model, data(60), quick(30, 1e-3));
  const auto m = evaluate(model, separable(10, 9), 16, 1600);
  for (const auto& e : m.exits) {
    CAPTURE(e.id);
    CHECK(e.uar > 50.0);
  }
}
