// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "exitwise/exits.hpp"

// Binary tensor container shared by model checkpoints and corpus caches.
// Layout, all integers little-endian:
//   8 bytes  magic "EXITWSE1"
//   u32      format version
//   u32      architecture hash
//   u32      tensor count
//   per tensor: u32 name length, UTF-8 name bytes, u8 rank,
//               rank x u64 extents, little-endian f32 payload

namespace exitwise {

inline constexpr char kCheckpointMagic[8] = {'E', 'X', 'I', 'T', 'W', 'S', 'E', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Container {
  std::uint32_t version = kCheckpointVersion;
  std::uint32_t architecture_hash = 0;
  std::vector<TensorRecord> tensors;
};

void write_container(const std::filesystem::path& path, const Container& container);
/// Reads and validates the whole file; throws CheckpointError with a kind
/// per failure (bad magic, bad version, truncated).
Container read_container(const std::filesystem::path& path);

std::vector<TensorRecord> snapshot(const nn::ParameterList<float>& params);

/// Copies records into parameters by name. With `require_all`, every
/// parameter must have a record; otherwise unmatched parameters keep their
/// values. All records are validated before anything is written.
/// Returns the number of parameters assigned.
std::size_t assign_parameters(const std::vector<TensorRecord>& records, const nn::ParameterList<float>& params,
                              bool require_all);

void save_checkpoint(const ExitModel<float>& model, const std::filesystem::path& path);

/// Loads a full checkpoint into an already constructed model, checking the
/// architecture hash first.
void load_checkpoint_into(const std::filesystem::path& path, ExitModel<float>& model);

MultiExitModel<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

}  // namespace exitwise
