// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0
//
// The vcmil command line: synth, train, eval and score subcommands.

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace vcmil {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfigError = 2,
  kExitDataError = 3,
  kExitNumericAbort = 4,
};

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace vcmil
