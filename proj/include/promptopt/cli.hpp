#pragma once

#include <iosfwd>

namespace promptopt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsageError = 2;

// Runs the command line. Usage errors exit 2 and name the offending flag;
// domain errors exit 1 and name the module error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace promptopt
