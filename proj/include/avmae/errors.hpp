#pragma once

#include <stdexcept>
#include <string>

namespace avmae {

// Shape/dimension mismatches between tensors or grids.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, zero norms, domain violations in numeric ops.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: non-scalar loss, backward without a tape, etc.
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Axis not divisible by patch size and similar layout problems.
struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

// Masking plans that leave zero visible or zero masked tokens, or that
// disagree with the grid they are applied to.
struct PlanError : std::runtime_error {
    explicit PlanError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration values; message carries the offending field path.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace avmae
