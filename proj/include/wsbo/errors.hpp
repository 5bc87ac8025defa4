#pragma once

#include <stdexcept>
#include <string>

namespace wsbo {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Vector length does not match the space / model dimensionality.
struct DimensionMismatchError : Error {
    using Error::Error;
};

/// An argument lies outside its valid domain (out-of-range coordinate,
/// zero counts, malformed configuration).
struct DomainError : Error {
    using Error::Error;
};

/// A referenced id / key is not present.
struct LookupError : Error {
    using Error::Error;
};

/// Input data violates a data contract (non-finite targets, errors
/// outside [0,1], too few records).
struct DataError : Error {
    using Error::Error;
};

/// Linear algebra gave up (Cholesky failed after the jitter ladder) or
/// an optimization diverged.
struct NumericalError : Error {
    using Error::Error;
};

/// A file could not be parsed; the message carries field context.
struct ParseError : Error {
    using Error::Error;
};

}  // namespace wsbo
