#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace selar::cli {

// Runs one subcommand. `args` excludes the program name. Returns the process
// exit code: 0 iff the command completed and every validation passed.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace selar::cli
