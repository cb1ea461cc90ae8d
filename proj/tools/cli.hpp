#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace acs::cli {

enum ExitCode : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,
  kConfig = 3,
  kMissingFile = 4,
  kFormat = 5,
  kInvariantFailed = 6,
};

/// Runs one `acs` invocation. Summaries go to `out`, error lines (one JSON
/// object each) to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace acs::cli
