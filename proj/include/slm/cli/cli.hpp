#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace slm::cli {

/// Exit codes shared by every command.
enum ExitCode : int { kOk = 0, kInternal = 1, kBadInput = 2, kBadData = 3 };

/// Parses `args` (without the program name) and runs one command.
/// Transcripts, tables and summaries go to `out`; diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace slm::cli
