#pragma once

namespace gpex {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `gpex` tool. Subcommands: train-ann, distill, explain,
/// faithfulness, debug-dataset, sweep-inducing.
int cli_main(int argc, const char* const* argv);

}  // namespace gpex
