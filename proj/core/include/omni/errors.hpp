#pragma once

#include <stdexcept>
#include <string>

namespace omni {

// Base class for all library failures. Subclasses map onto the CLI
// exit-code contract: UsageError -> 1, DataError -> 2, NumericError -> 3.
struct Error : std::runtime_error {
    explicit Error(const std::string & msg) : std::runtime_error(msg) {}
};

// Malformed invocation: bad flags, bad config keys, invalid argument combos.
struct UsageError : Error {
    explicit UsageError(const std::string & msg) : Error(msg) {}
};

// Malformed or inconsistent data: shape mismatches, bad files, id ranges.
struct DataError : Error {
    explicit DataError(const std::string & msg) : Error(msg) {}
};

// Shape mismatch between tensors; a DataError with a conventional message
// of the form "<primitive>: ... [d0,d1] ... [e0,e1]".
struct ShapeError : DataError {
    explicit ShapeError(const std::string & msg) : DataError(msg) {}
};

// Numerical failure: non-finite values, diverged training, failed checks.
struct NumericError : Error {
    explicit NumericError(const std::string & msg) : Error(msg) {}
};

} // namespace omni
