#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gnn::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // numerical or validation failure
inline constexpr int kExitUsage = 2;

struct Options {
  // Enables the hidden --inject-fault flag of the gradcheck command, which
  // corrupts a backward rule to prove the check can fail.
  bool test_hooks = false;
};

// Run the command line `args` (without the program name), writing normal
// output to `out` and diagnostics to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Options& options = {});

}  // namespace gnn::cli
