#pragma once

#include <stdexcept>
#include <string>

namespace sggnn {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration values (bad counts, fractions out of range, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Operand shapes that do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. Carries the offending line number (1-based, 0 if unknown).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, divergence, singular systems.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace sggnn
