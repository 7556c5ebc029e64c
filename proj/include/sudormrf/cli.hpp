#pragma once

#include <iosfwd>

namespace sudormrf {

// Exit codes of cli_dispatch.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitValidation = 3;
inline constexpr int kExitNumerical = 4;

// Subcommands: separate, stream, profile, gradcheck, train-toy, eval.
// Machine-readable results go to `out` as one JSON object per line;
// diagnostics go to `err`.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sudormrf
