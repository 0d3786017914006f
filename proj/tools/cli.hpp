#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pyratten::cli {

enum ExitCode : int {
  kOk = 0,
  kValidationError = 1,
  kIoError = 2,
  kGradcheckFailed = 3,
};

// Runs one command. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pyratten::cli
