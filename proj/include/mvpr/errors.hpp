#pragma once

#include <stdexcept>
#include <string>

namespace mvpr {

// Invalid argument values (non-positive sizes, bad rates, ...).
struct ParamError : std::invalid_argument {
    explicit ParamError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A caller broke a documented precondition (shape mismatch, non-normalized
// input, mismatched key sets, ...). The message names the offending operation.
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Malformed external input (manifest lines, config files, checkpoints).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where the pipeline requires finite ones.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Procedural generation gave up (e.g. anchor rejection sampling).
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mvpr
