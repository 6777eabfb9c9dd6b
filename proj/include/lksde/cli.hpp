#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lksde::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kRuntimeError = 3 };

/// Entry point behind the `lksde` tool. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses "start:stop:count" into `count` evenly spaced values.
std::vector<double> parse_range(const std::string& text);

}  // namespace lksde::cli
