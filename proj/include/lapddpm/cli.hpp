#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lapddpm::cli {

// Runs the CLI (subcommands preprocess | train | generate | eval | attack).
// Exit codes: 0 ok, 1 I/O error, 2 validation error, 3 numerical failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lapddpm::cli
