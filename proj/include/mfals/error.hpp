#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mfals {

// Data-side failures: malformed input, bad indices, I/O trouble.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
public:
    ParseError(std::size_t line, const std::string& what)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class BoundsError : public DataError {
public:
    using DataError::DataError;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

// Numerical failures: singular systems, fp16 overflow, SGD divergence.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SingularSystemError : public NumericalError {
public:
    SingularSystemError(std::size_t row, const std::string& what)
        : NumericalError("row " + std::to_string(row) + ": " + what), row_(row) {}

    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

// Bad arguments or option combinations.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace mfals
