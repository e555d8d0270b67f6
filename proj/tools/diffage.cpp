// SPDX-License-Identifier: Apache-2.0
#include "diffage/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    const auto result = diffage::cli::run(std::vector<std::string>(argv + 1, argv + argc));
    auto& stream = result.exit_code == 0 ? std::cout : std::cerr;
    if (!result.summary.empty()) stream << result.summary << '\n';
    return result.exit_code;
}
