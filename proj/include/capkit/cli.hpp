#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace capkit {

/// Runs one `capkit` subcommand. argv[0] is the program name. Returns 0 on
/// success, 2 for usage errors and 1 for every other failure, which is
/// reported on `err` as a single "error: code=<code> message=<text>" line.
int run_command(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace capkit
