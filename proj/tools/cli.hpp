#pragma once

#include <iosfwd>

namespace dmvfc::cli {

// Parses argv and runs one subcommand. Diagnostics go to `err`, reports to
// `out`. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dmvfc::cli
