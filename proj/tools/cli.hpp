#pragma once

#include <iosfwd>

namespace grail::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kCheckFailed = 1;
inline constexpr int kUsage = 2;
inline constexpr int kIncompatible = 3;

/// Runs the command line; the last line written to `out` is a JSON summary.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace grail::cli
