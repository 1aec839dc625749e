#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lmda::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Runs one `lmda` invocation. `args` excludes the program name. Results go
/// to `out`; the resolved configuration, progress and diagnostics go to
/// `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lmda::cli
