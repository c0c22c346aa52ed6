#pragma once

#include <stdexcept>
#include <string>

namespace lpbnn {

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Operand shapes do not conform to an op's algebraic rule.
struct ShapeError : Error {
    using Error::Error;
};

// An op received NaN/Inf input. Training loops catch this as divergence.
struct NonFiniteError : Error {
    using Error::Error;
};

// Invalid argument value (bad index, negative coefficient, ...).
struct ValueError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace lpbnn
