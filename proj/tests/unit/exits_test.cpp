// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include <set>

#include "doctest.h"
#include "exitwise/error.hpp"
#include "values.hpp"
#include "exitwise/exits.hpp"

using namespace exitwise;
using exitwise::testing::values;

namespace {

ModelConfig tiny(std::vector<ExitSpec> exits) {
  ModelConfig m;
  m.backbone.encoder_convs = {{8, 3, 2}};
  m.backbone.num_layers = 4;
  m.backbone.hidden = 8;
  m.backbone.heads = 2;
  m.backbone.ff_dim = 12;
  m.backbone.head_hidden = 5;
  m.backbone.num_classes = 3;
  m.exits = std::move(exits);
  return m;
}

ExitSpec at(std::size_t layer, BlockKind kind = BlockKind::Conv1x1) { return {layer, kind, std::nullopt}; }

}  // namespace

TEST_CASE("exit placement is validated") {
  CHECK_THROWS_AS(tiny({at(0)}).validate(), ConfigError);
  CHECK_THROWS_AS(tiny({at(4)}).validate(), ConfigError);
  CHECK_THROWS_AS(tiny({at(2), at(2)}).validate(), ConfigError);
  CHECK_THROWS_AS(tiny({at(3), at(1)}).validate(), ConfigError);
  CHECK_NOTHROW(tiny({}).validate());
  CHECK_NOTHROW(tiny({at(1), at(3)}).validate());
}

TEST_CASE("exit ids, order and teacher entry") {
  MultiExitModel<float> m(tiny({at(1), at(3, BlockKind::Gru)}), 1);
  const auto infos = m.exit_infos();
  REQUIRE(infos.size() == 3);
  CHECK(infos[0].id == "layer1");
  CHECK(infos[1].id == "layer3");
  CHECK(infos[2].id == "teacher");
  CHECK(infos[2].teacher);
  CHECK(infos[2].layer == 4);
  CHECK_THROWS_AS(m.info("layer2"), ConfigError);
  CHECK_THROWS_AS(m.logits_at(Tensor::zeros({1, 11}), "layer2"), ConfigError);
}

TEST_CASE("logits_at runs only the layers the exit needs") {
  MultiExitModel<float> m(tiny({at(1), at(3)}), 2);
  const auto wave = Tensor::full({2, 11}, 0.1f);
  m.backbone().reset_layer_counter();
  const auto l1 = m.logits_at(wave, "layer1");
  CHECK(m.backbone().layers_executed() == 1);
  m.backbone().reset_layer_counter();
  m.logits_at(wave, "teacher");
  CHECK(m.backbone().layers_executed() == 4);
  m.backbone().reset_layer_counter();
  const auto full = m.forward(wave);
  CHECK(m.backbone().layers_executed() == 4);
  CHECK(values(l1) == values(full.exits[0].logits));
  CHECK(full.logits.shape() == Shape{2, 3});
}

TEST_CASE("adding an exit leaves the other exits' weights untouched") {
  MultiExitModel<float> a(tiny({at(2)}), 9);
  MultiExitModel<float> b(tiny({at(1), at(2)}), 9);
  const auto pa = a.exit_parameters("layer2");
  const auto pb = b.exit_parameters("layer2");
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(values(pa[i].tensor) == values(pb[i].tensor));
  }
}

TEST_CASE("exit parameter sets are prefixes of the backbone plus the branch") {
  MultiExitModel<float> m(tiny({at(1, BlockKind::Lstm), at(3, BlockKind::Conv1x1Scalar)}), 3);
  const auto l1 = m.exit_parameters("layer1");
  const auto l3 = m.exit_parameters("layer3");
  const auto t = m.exit_parameters("teacher");
  std::set<std::string> names;
  for (const auto& p : l3) names.insert(p.name);
  CHECK(names.count("exit.3.conv1x1_scalar.block.weight") == 1);
  CHECK(names.count("backbone.layer.4.attn.qkv.weight") == 0);
  CHECK(nn::count_scalars(l1) < nn::count_scalars(t));
  std::set<std::string> all;
  for (const auto& p : m.parameters()) CHECK(all.insert(p.name).second);
}

TEST_CASE("truncated model exposes one exit at its depth") {
  const auto cfg = tiny({}).backbone;
  TruncatedModel<float> t(cfg, 2, 4);
  CHECK(t.exit_infos().size() == 1);
  CHECK(t.exit_infos()[0].id == "layer2");
  CHECK(nn::count_scalars(t.active_parameters()) + nn::count_scalars(t.frozen_parameters()) ==
        nn::count_scalars(t.parameters()));
  CHECK_THROWS_AS(TruncatedModel<float>(cfg, 5, 1), ConfigError);
  CHECK_THROWS_AS(t.logits_at(Tensor::zeros({1, 11}), "teacher"), ConfigError);
  CHECK(t.architecture_hash() != TruncatedModel<float>(cfg, 3, 4).architecture_hash());
}

TEST_CASE("clip MACs grow with depth") {
  MultiExitModel<float> m(tiny({at(1), at(2), at(3)}), 5);
  const auto a = m.clip_macs("layer1", 72), b = m.clip_macs("layer2", 72), c = m.clip_macs("layer3", 72),
             t = m.clip_macs("teacher", 72);
  CHECK(a < b);
  CHECK(b < c);
  CHECK(c < t);
}

TEST_CASE("block kinds round-trip through their names") {
  for (auto k : {BlockKind::Conv1x1, BlockKind::Conv1x1Scalar, BlockKind::Lstm, BlockKind::Gru})
    CHECK(parse_block_kind(to_string(k)) == k);
  for (auto k : {SimKind::L1, SimKind::L2, SimKind::Cosine, SimKind::L1Cosine, SimKind::L2Cosine})
    CHECK(parse_sim_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_block_kind("conv3x3"), ConfigError);
}
