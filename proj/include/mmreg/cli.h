#pragma once

#include <iosfwd>
#include <string>

namespace mmreg {

inline constexpr const char* tool_version = "0.1.0";

/// Exit codes: 0 success, 1 usage error, 2 runtime error.
int cli_main(int argc, char** argv);
int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err);

} // namespace mmreg
