#pragma once

#include <string>
#include <utility>
#include <vector>

namespace bcp {

// Runs one command line (subcommand plus flags, without a program name) and
// returns the process exit code. Failures emit a single
// {"code": ..., "message": ...} json line on stderr.
int run_cli(const std::vector<std::string>& args);

// key=value pairs from a config file, in file order. '#' starts a comment;
// blank lines are skipped. Values keep internal whitespace.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path);

// Worker count from BCPREDICT_THREADS (unset or empty means 1).
int threads_from_env();

}  // namespace bcp
