#pragma once

#include <stdexcept>
#include <string>

namespace iern {

// Violated operation precondition (bad shapes, out-of-range labels, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid configuration: unknown layer kind, bad experiment config, ...
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Operation called in the wrong state (e.g. backward without a recorded forward).
struct StateError : std::runtime_error {
    explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

// File system / serialization failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace iern
