#pragma once

#include <iosfwd>

namespace mmpkd::cli {

// Exit codes: 0 success, 1 usage, 2 precondition, 3 non-finite loss.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitPrecondition = 2;
inline constexpr int kExitNumerical = 3;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mmpkd::cli
