#pragma once

#include <iosfwd>

namespace damm::cli {

// Entry point of the `damm` command. Returns 0 on success, 1 on usage or
// input errors, 2 on numerical failures.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace damm::cli
