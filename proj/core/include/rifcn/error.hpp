#pragma once

#include <stdexcept>
#include <string>

namespace rifcn {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/kernel dimension disagreement or geometrically impossible request.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed configuration (unknown key, bad value, invalid model spec).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Missing, unreadable, or malformed data files; unpaired or mismatched inputs.
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite values where finite ones are required (diverged training, bad input).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace rifcn
