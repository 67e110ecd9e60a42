#pragma once

#include <string>
#include <vector>

namespace dpmm::cli {

// Exit codes shared by every subcommand.
inline constexpr int exit_ok = 0;
inline constexpr int exit_config_error = 2;
inline constexpr int exit_divergence = 3;
inline constexpr int exit_schema_mismatch = 4;

// Full command-line entry point; args excludes the program name. Returns the
// process exit code instead of calling exit(), so tests can drive it
// in-process. All output lands under --out; diagnostics go to stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace dpmm::cli
