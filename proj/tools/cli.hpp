#pragma once

#include <string>
#include <vector>

namespace kmeflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Parses the command line, runs the selected subcommand and returns the
/// process exit code. Errors are reported on standard error.
int run(int argc, char** argv);

/// Same, for an argument vector without the program name.
int run(const std::vector<std::string>& args);

}  // namespace kmeflow::cli
