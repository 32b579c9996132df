// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/types.hpp"

#include "exitwise/error.hpp"

namespace exitwise {

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::Conv1x1: return "conv1x1";
    case BlockKind::Conv1x1Scalar: return "conv1x1_scalar";
    case BlockKind::Lstm: return "lstm";
    case BlockKind::Gru: return "gru";
  }
  return "?";
}

std::string to_string(SimKind kind) {
  switch (kind) {
    case SimKind::L1: return "l1";
    case SimKind::L2: return "l2";
    case SimKind::Cosine: return "cosine";
    case SimKind::L1Cosine: return "l1+cosine";
    case SimKind::L2Cosine: return "l2+cosine";
  }
  return "?";
}

std::string to_string(SimLevel level) { return level == SimLevel::Embedding ? "embedding" : "linear"; }

BlockKind parse_block_kind(std::string_view text) {
  if (text == "conv1x1" || text == "cnn") return BlockKind::Conv1x1;
  if (text == "conv1x1_scalar") return BlockKind::Conv1x1Scalar;
  if (text == "lstm") return BlockKind::Lstm;
  if (text == "gru") return BlockKind::Gru;
  throw ConfigError("unknown block kind '" + std::string(text) + "' (expected conv1x1, conv1x1_scalar, lstm, gru)");
}

SimKind parse_sim_kind(std::string_view text) {
  if (text == "l1") return SimKind::L1;
  if (text == "l2") return SimKind::L2;
  if (text == "cosine") return SimKind::Cosine;
  if (text == "l1+cosine") return SimKind::L1Cosine;
  if (text == "l2+cosine") return SimKind::L2Cosine;
  throw ConfigError("unknown similarity loss '" + std::string(text) +
                    "' (expected l1, l2, cosine, l1+cosine, l2+cosine)");
}

SimLevel parse_sim_level(std::string_view text) {
  if (text == "embedding") return SimLevel::Embedding;
  if (text == "linear") return SimLevel::Linear;
  throw ConfigError("unknown similarity level '" + std::string(text) + "' (expected embedding, linear)");
}

}  // namespace exitwise
