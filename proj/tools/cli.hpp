#pragma once

#include <string>
#include <vector>

namespace ascnet {

/// Entry point of the `ascnet` tool. Returns the process exit code:
/// 0 success, 1 runtime or I/O failure, 2 usage or validation error.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace ascnet
