#pragma once

#include <iosfwd>

namespace compmark::cli {

/// Exit status: 0 ok, 2 invalid input or arguments, 3 numeric degeneracy,
/// 1 anything else.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace compmark::cli
