// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace hldet {

// Runs one CLI invocation; args exclude the program name. Exit codes:
// 0 success, 1 usage/config error, 2 data or format error, 3 numeric abort.
int run_cli(const std::vector<std::string>& args);

}  // namespace hldet
