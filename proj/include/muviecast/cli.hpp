#pragma once

// Command-line entry point: stylize, pretrain, ablate, color-adjust,
// eval-consistency.

#include <string>
#include <vector>

namespace muvie::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    // bad flags, configuration or input data
inline constexpr int kExitRuntime = 2;  // unreadable files, numeric failure, other runtime errors

int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace muvie::cli
