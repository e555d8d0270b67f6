// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace diffage::cli {

struct CommandResult {
    /// 0 success, 1 invalid input or usage, 2 failure while running.
    int exit_code = 0;
    std::vector<std::filesystem::path> artifacts;
    std::string summary;
};

/// Seed used by every subcommand unless --seed is given.
inline constexpr std::uint64_t kDefaultSeed = 20230717;
/// Environment variable naming the default output root.
inline constexpr const char* kOutputEnv = "DIFFAGE_OUT";

/// Dispatches `args` (without the program name) to a subcommand.
CommandResult run(const std::vector<std::string>& args);

}  // namespace diffage::cli
