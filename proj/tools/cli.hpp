#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ceco::cli {

// Exit statuses of the command-line tool.
enum ExitCode : int {
    kOk = 0,
    kCheckFailed = 1,
    kBadInput = 2,
    kIoError = 3,
    kInsufficientData = 4,
    kDiverged = 5,
};

// Runs one invocation; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace ceco::cli
