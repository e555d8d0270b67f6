// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace diffage {

/// Invalid configuration value (schedule bounds, network sizes, train settings).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition (shape, range).
struct ContractViolation : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Reverse step at a position where the signal coefficient vanishes.
struct DegenerateStep : std::domain_error {
    using std::domain_error::domain_error;
};

/// Malformed or inconsistent input data (manifest rows, image files).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Statistic undefined for the given input (zero variance, too few samples).
struct UndefinedStatistic : std::domain_error {
    using std::domain_error::domain_error;
};

/// Training produced a non-finite loss; `term` names the offending component.
struct NonFiniteLoss : std::runtime_error {
    std::string term;
    explicit NonFiniteLoss(std::string which)
        : std::runtime_error("non-finite loss in " + which), term(std::move(which)) {}
};

}  // namespace diffage
