#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace arfc {

/// Exit codes of the command-line tool.
enum ExitCode : int {
    exit_ok = 0,
    exit_usage = 1,    ///< bad flags, bad or unknown config keys
    exit_data = 2,     ///< unreadable or malformed input files
    exit_numeric = 3,  ///< NaN/Inf, failed gradient check or selftest
};

/// Runs one subcommand. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace arfc
