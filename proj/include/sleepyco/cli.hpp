#pragma once

#include <string>
#include <vector>

namespace sleepyco::cli {

// Entry point shared by the binary and the tests. `args` excludes argv[0].
// Returns the process exit status (0 on success).
int run(const std::vector<std::string>& args);

}  // namespace sleepyco::cli
