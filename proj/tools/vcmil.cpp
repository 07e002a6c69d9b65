// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "vcmil/cli.hpp"

int main(int argc, char** argv) {
  return vcmil::run_cli(std::vector<std::string>(argv + 1, argv + argc),
                        std::cout, std::cerr);
}
