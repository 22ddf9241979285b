#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace refuel::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Runs the `refuel` command line. args[0] is the program name. Returns the
/// process exit code: 0 on success, 1 on a runtime failure, 2 on invalid
/// configuration; CLI11 parse errors keep CLI11's codes. Errors are written
/// to `err` as a single JSON object.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace refuel::cli
