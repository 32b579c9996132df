// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "exitwise/cli.hpp"

int main(int argc, char** argv) { return exitwise::run_cli(argc, argv, std::cout, std::cerr); }
