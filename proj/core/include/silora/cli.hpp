#pragma once

#include <string>
#include <vector>

namespace silora {

// Entry point shared by the silora binary and the CLI tests. `args` excludes
// the program name. Returns the process exit status.
int run_cli(const std::vector<std::string>& args);

} // namespace silora
