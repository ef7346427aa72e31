#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace polypbench::cli {

enum ExitCode { kSuccess = 0, kDomainError = 1, kUsageError = 2 };

/// Runs one command line (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// POLYPBENCH_OUT, or "polypbench-out" when unset.
std::string output_root();

}  // namespace polypbench::cli
