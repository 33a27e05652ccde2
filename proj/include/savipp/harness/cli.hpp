#pragma once

#include <string>
#include <vector>

namespace savipp::harness {

// Parses argv-style arguments and dispatches to the subcommand runners.
// Exit codes: 0 success, 2 usage error, 1 runtime failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace savipp::harness
