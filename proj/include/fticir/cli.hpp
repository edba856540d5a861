#pragma once

// Command-line front end: train, caption, index, search, evaluate, describe,
// serve. Output is tab-separated and newline-terminated.

#include <iosfwd>
#include <string>
#include <vector>

namespace fticir::cli {

// Exit codes: 0 success, 1 failure (one `error<TAB>kind<TAB>message` line on
// `err`), 2 usage error (usage text on `err`).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

std::string usage();

}  // namespace fticir::cli
