#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace orbitedit::cli {

enum ExitCode : int { kSuccess = 0, kOperationalError = 1, kAcceptanceFailure = 2 };

// Parses and runs one command line (args excludes the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace orbitedit::cli
