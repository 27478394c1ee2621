#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace daregram::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2, kExitIo = 3 };

/// `args` excludes the program name. Results go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace daregram::cli
