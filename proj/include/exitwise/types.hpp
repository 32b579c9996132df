// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

namespace exitwise {

/// Block M placed between an intermediate layer and an exit's linear head.
/// `Conv1x1` is a pointwise R->R channel map over every frame;
/// `Conv1x1Scalar` reads the (F,R) plane as a one-channel image under a
/// 1x1 kernel with one output channel, i.e. a learned scalar affine map.
enum class BlockKind { Conv1x1, Conv1x1Scalar, Lstm, Gru };

enum class SimKind { L1, L2, Cosine, L1Cosine, L2Cosine };

/// Which pair of teacher/student features the similarity loss compares:
/// pooled block outputs vs pooled final layer, or first-linear activations.
enum class SimLevel { Embedding, Linear };

std::string to_string(BlockKind kind);
std::string to_string(SimKind kind);
std::string to_string(SimLevel level);

/// Parsers accept the spellings produced by to_string; throw ConfigError.
BlockKind parse_block_kind(std::string_view text);
SimKind parse_sim_kind(std::string_view text);
SimLevel parse_sim_level(std::string_view text);

}  // namespace exitwise
