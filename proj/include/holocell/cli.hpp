// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <string_view>
#include <vector>

namespace holocell {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumerical = 4 };

/// Parses "7", "1..100" or "1,2,5" into a list of positive integers.
/// Throws ContractViolation on anything else.
std::vector<std::size_t> parse_range(std::string_view text);

/// Entry point of the `holocell` tool: capacity, train, eval and dump.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace holocell
