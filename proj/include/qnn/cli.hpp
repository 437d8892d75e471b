#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace qnn::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kUsage = 2,
  kIo = 3,
};

/// Runs one command line (args exclude the program name). Human-readable
/// output and JSON records go to `out`; a single `error kind=... message=...`
/// line goes to `err` on failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace qnn::cli
