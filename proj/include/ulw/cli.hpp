#pragma once

#include <iosfwd>

namespace ulw::cli {

/// Entry point of the `ulw` tool. Exit codes: 0 success, 1 runtime failure
/// (one-line "error: ..." on `err`), 2 usage error (usage text on `err`).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ulw::cli
