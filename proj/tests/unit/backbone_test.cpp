// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "exitwise/backbone.hpp"
#include "exitwise/error.hpp"
#include "values.hpp"

using namespace exitwise;
using exitwise::testing::values;

namespace {

BackboneConfig small_config() {
  BackboneConfig c;
  c.encoder_convs = {{8, 3, 2}};
  c.num_layers = 3;
  c.hidden = 8;
  c.heads = 2;
  c.ff_dim = 12;
  c.head_hidden = 5;
  c.num_classes = 4;
  return c;
}

}  // namespace

TEST_CASE("frame count follows the conv stack") {
  const BackboneConfig desk;
  CHECK(desk.frames_for(72) == 15);
  CHECK(desk.min_input_length() == 13);
  CHECK(desk.frames_for(13) == 1);
  CHECK(desk.frames_for(12) == 0);
}

TEST_CASE("config validation") {
  auto c = small_config();
  c.num_layers = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.encoder_convs.back().out_channels = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(small_config().validate());
}

TEST_CASE("forward_to_layer runs exactly k layers and retains the requested ones") {
  Rng rng(1);
  Backbone<float> bb(small_config(), rng);
  const auto wave = Tensor::zeros({2, 11});
  bb.reset_layer_counter();
  const auto st = bb.forward_to_layer(wave, 2, {1, 2});
  CHECK(bb.layers_executed() == 2);
  CHECK(st.computed == 2);
  CHECK(st.at(1).shape() == Shape{2, 5, 8});
  CHECK_THROWS_AS(st.at(3), ShapeError);
  CHECK_THROWS_AS(bb.forward_to_layer(wave, 4, {}), ShapeError);
  CHECK_THROWS_AS(bb.forward_to_layer(wave, 2, {3}), ShapeError);
  CHECK(bb.layers_executed() == 2);
}

TEST_CASE("inputs shorter than the receptive field are rejected") {
  Rng rng(2);
  Backbone<float> bb(small_config(), rng);
  CHECK_THROWS_AS(bb.feature_encode(Tensor::zeros({1, 2})), ShapeError);
  CHECK_THROWS_AS(bb.feature_encode(Tensor::zeros({2})), ShapeError);
}

TEST_CASE("earlier layer outputs do not depend on later layers") {
  Rng rng(3);
  Backbone<double> bb(small_config(), rng);
  Rng in(4);
  std::vector<double> v(22);
  for (auto& x : v) x = in.uniform(-1.0, 1.0);
  const Tensor64 wave({2, 11}, v);
  const auto shallow = bb.forward_to_layer(wave, 1, {1});
  const auto deep = bb.forward_to_layer(wave, 3, {1, 3});
  CHECK(values(shallow.at(1)) == values(deep.at(1)));
}

TEST_CASE("layer MAC count matches a direct tally") {
  const auto c = small_config();
  const std::size_t f = 7;
  const std::uint64_t r = c.hidden;
  const std::uint64_t qkv = f * r * 3 * r, out = f * r * r, scores = f * f * r, context = f * f * r;
  const std::uint64_t ff = f * r * c.ff_dim + f * c.ff_dim * r;
  CHECK(layer_macs(c, f) == qkv + out + scores + context + ff);
  // Single conv: frames * kernel * in * out.
  CHECK(encoder_macs(c, 11) == 5u * 3u * 1u * 8u);
  CHECK(head_macs(c) == 8u * 5u + 5u * 4u);
}

TEST_CASE("parameter names are stable and complete") {
  Rng rng(5);
  Backbone<float> bb(small_config(), rng);
  nn::ParameterList<float> all, enc, l2;
  bb.collect(all);
  bb.collect_encoder(enc);
  bb.collect_layer(2, l2);
  CHECK(all.front().name == "backbone.encoder.conv0.weight");
  CHECK(l2.front().name.rfind("backbone.layer.2.", 0) == 0);
  std::size_t per_layer = l2.size();
  CHECK(all.size() == enc.size() + 3 * per_layer);
}
