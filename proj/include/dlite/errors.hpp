#pragma once

#include <stdexcept>
#include <string>

namespace dlite {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Operand shapes do not conform.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A computation produced NaN/Inf or consumed non-finite input.
class NumericError : public Error {
public:
    using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

// A file does not look like the expected container (bad magic/version).
class FormatError : public Error {
public:
    using Error::Error;
};

// A file parses but its pieces disagree (manifest vs. payload, bad indices).
class IntegrityError : public Error {
public:
    using Error::Error;
};

// Resolved configuration is unusable (mismatched dimensions, bad ranges).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Bad command-line usage (missing inputs, unknown flags).
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace dlite
