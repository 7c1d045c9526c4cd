// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stflow {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents do not satisfy an operation's contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Value outside the mathematical domain of an operation
/// (non-positive Box-Cox input, zero degree, degenerate likelihood, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Time extent too short for the requested window / kernel.
class WindowError : public Error {
public:
    using Error::Error;
};

/// Malformed caller input that is not a shape problem (bad ids, empty panel).
class InputError : public Error {
public:
    using Error::Error;
};

/// An API precondition stated in the contract was violated.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid run configuration (unknown key, bad variant, missing path).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unreadable or inconsistent CSV content; carries the 1-based line number
/// (0 when the problem is not tied to a specific line).
class CsvError : public Error {
public:
    CsvError(const std::string& msg, std::size_t line)
        : Error(line > 0 ? msg + " (line " + std::to_string(line) + ")" : msg), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Date sequence is not strictly increasing and contiguous.
class DateError : public Error {
public:
    using Error::Error;
};

/// Not enough history to run a prediction.
class HistoryError : public Error {
public:
    using Error::Error;
};

}  // namespace stflow
