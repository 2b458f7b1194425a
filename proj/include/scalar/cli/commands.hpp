#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace scalar::cli {

// Entry point of the `scalar` tool. Failures print one line starting with
// "error: " to `err` and return a nonzero code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scalar::cli
