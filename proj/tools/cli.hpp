#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace metafunc::cli {

enum ExitCode : int { kOk = 0, kConfig = 2, kIo = 3, kNumerical = 4 };

/// Runs one command line (args[0] is the program name). Results go to `out`,
/// diagnostics to the logger.
int run(const std::vector<std::string>& args, std::ostream& out);

}  // namespace metafunc::cli
