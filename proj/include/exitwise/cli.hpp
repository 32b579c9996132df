// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>

namespace exitwise {

/// Exit codes: 0 ok, 1 other failure, 2 config, 3 numeric, 4 checkpoint,
/// 5 infeasible budget.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace exitwise
