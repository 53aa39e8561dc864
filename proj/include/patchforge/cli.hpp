#pragma once

#include <iosfwd>

namespace patchforge {

// Exit status: 0 success, 1 operational failure (I/O, validation), 2 usage.
// Failures print a single "error: ..." line to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace patchforge
