#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace maskdiff::cli {

// Runs one command line (without the program name). Results go to `out`,
// logs and diagnostics to `err`. Returns 0 on success, 1 on a runtime error
// and 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv);

}  // namespace maskdiff::cli
