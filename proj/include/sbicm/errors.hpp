#pragma once

#include <stdexcept>
#include <string>

namespace sbicm {

// Shape mismatch between matrices/vectors that should chain.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Argument outside the mathematical domain of an operation.
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-facing configuration (unknown keys, unresolvable paths, refusals).
// Mapped to exit code 2 by the CLI.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss or gradient during training. Mapped to exit code 3.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Sampler could not meet its acceptance budget.
struct BudgetExceededError : std::runtime_error {
    explicit BudgetExceededError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated internal contract (stale caches and the like).
struct InternalError : std::logic_error {
    explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace sbicm
