#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace estnma {

/// Exit codes of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitInfeasible = 3,
  kExitNumerical = 4,
};

/// Runs the CLI. `args[0]` is the program name. Data goes to `out` (or the
/// `--output` file); diagnostics go to `err`.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace estnma
