// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "holocell/cli.hpp"

int main(int argc, char** argv) { return holocell::run_cli(argc, argv, std::cout, std::cerr); }
