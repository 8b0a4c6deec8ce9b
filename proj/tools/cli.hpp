#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace soundstream::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

// Runs one command line (args excludes the program name). Results go to
// `out`, logs and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace soundstream::cli
