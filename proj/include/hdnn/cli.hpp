#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hdnn {

// Entry point of the `hdnn` command-line tool. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hdnn
