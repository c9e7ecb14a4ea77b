#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lucid::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitInternal = 3;

/// Runs one command line. Errors in the input map to exit code 2, broken
/// internal invariants to 3.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lucid::cli
