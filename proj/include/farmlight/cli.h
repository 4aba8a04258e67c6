#pragma once

#include <iosfwd>

namespace farmlight::cli {

/// 0 success, 1 runtime or assertion failure, 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace farmlight::cli
