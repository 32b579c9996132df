// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "exitwise/checkpoint.hpp"
#include "exitwise/error.hpp"
#include "values.hpp"

using namespace exitwise;
using exitwise::testing::values;
namespace fs = std::filesystem;

namespace {

ModelConfig small() {
  ModelConfig m;
  m.backbone.encoder_convs = {{8, 3, 2}};
  m.backbone.num_layers = 3;
  m.backbone.hidden = 8;
  m.backbone.heads = 2;
  m.backbone.ff_dim = 12;
  m.backbone.head_hidden = 5;
  m.backbone.num_classes = 7;
  m.exits = {{1, BlockKind::Lstm, std::nullopt}, {2, BlockKind::Conv1x1, std::nullopt}};
  return m;
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("exitwise_ckpt_" + std::to_string(::getpid()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

CheckpointError::Kind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  FAIL("no CheckpointError thrown");
  return CheckpointError::Kind::Io;
}

std::vector<char> bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void put(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("checkpoint round trip restores every tensor") {
  TempDir dir;
  MultiExitModel<float> a(small(), 1);
  save_checkpoint(a, dir.path / "m.ckpt");
  const auto b = load_checkpoint(dir.path / "m.ckpt", small());
  const auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(values(pa[i].tensor) == values(pb[i].tensor));
  }
  const auto c = read_container(dir.path / "m.ckpt");
  CHECK(c.architecture_hash == small().architecture_hash());
  CHECK(c.tensors.size() == pa.size());
}

TEST_CASE("checkpoint error kinds") {
  TempDir dir;
  const auto path = dir.path / "m.ckpt";
  MultiExitModel<float> a(small(), 1);
  save_checkpoint(a, path);
  const auto good = bytes(path);

  CHECK(kind_of([&] { read_container(dir.path / "missing.ckpt"); }) == CheckpointError::Kind::Io);

  auto bad = good;
  bad[0] = 'X';
  put(path, bad);
  CHECK(kind_of([&] { read_container(path); }) == CheckpointError::Kind::BadMagic);

  bad = good;
  bad[8] = 9;
  put(path, bad);
  CHECK(kind_of([&] { read_container(path); }) == CheckpointError::Kind::BadVersion);

  bad.assign(good.begin(), good.begin() + static_cast<long>(good.size() / 2));
  put(path, bad);
  CHECK(kind_of([&] { read_container(path); }) == CheckpointError::Kind::Truncated);

  put(path, good);
  auto other = small();
  other.exits.pop_back();
  CHECK(kind_of([&] { load_checkpoint(path, other); }) == CheckpointError::Kind::ArchitectureMismatch);

  auto c = read_container(path);
  c.tensors.pop_back();
  write_container(path, c);
  CHECK(kind_of([&] { load_checkpoint(path, small()); }) == CheckpointError::Kind::MissingTensor);

  c = read_container(dir.path / "m.ckpt");
  save_checkpoint(a, path);
  c = read_container(path);
  c.tensors[0].shape = {c.tensors[0].data.size()};
  write_container(path, c);
  CHECK(kind_of([&] { load_checkpoint(path, small()); }) == CheckpointError::Kind::ShapeMismatch);
}

TEST_CASE("partial assignment copies only matching tensors") {
  MultiExitModel<float> a(small(), 1), b(small(), 2);
  auto recs = snapshot(a.parameters());
  recs.resize(3);
  CHECK(assign_parameters(recs, b.parameters(), false) == 3);
  CHECK(values(b.parameters()[0].tensor) == values(a.parameters()[0].tensor));
  CHECK(values(b.parameters()[5].tensor) != values(a.parameters()[5].tensor));
  CHECK_THROWS_AS(assign_parameters(recs, b.parameters(), true), CheckpointError);
}
