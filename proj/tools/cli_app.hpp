#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace clutter4d {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitIo = 4,
  kExitFormat = 5,
  kExitNumeric = 6,
};

/// Runs one subcommand. `args` excludes the program name. Each run writes
/// its resolved configuration to `<out-dir>/config.txt`; value precedence is
/// command line > C4D_* environment > --config file > built-in default.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace clutter4d
