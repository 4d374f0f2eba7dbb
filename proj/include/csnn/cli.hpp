#pragma once

#include <iosfwd>

namespace csnn::cli {

inline constexpr const char* kVersion = "1.0.0";

// Entry point of the csnn tool. Returns the process exit code; diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace csnn::cli
