#pragma once

// Entry point of the `mixclass` command-line tool, callable in-process.

#include <iosfwd>
#include <string>
#include <vector>

namespace mixclass::cli {

// Stable exit-code contract.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // numeric or other runtime failure
inline constexpr int kExitConfig = 2;
inline constexpr int kExitConvergence = 3;
inline constexpr int kExitData = 4;

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mixclass::cli
