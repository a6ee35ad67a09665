#pragma once

#include <iosfwd>

namespace tinysense::cli {

/// Exit codes of the tool.
enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kDiverged = 3, kNetwork = 4 };

/// Parses argv and runs one subcommand. Results go to `out`, diagnostics
/// to `err` and the log (stderr, level from TS_LOG).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tinysense::cli
