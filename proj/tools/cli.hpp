#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stainforge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one command line (without the program name). Regular output goes to
/// `out`; help, usage errors and JSON log lines go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace stainforge::cli
