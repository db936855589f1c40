#pragma once

#include <stdexcept>
#include <string>

namespace relscale {

/// Base class for every failure raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data violates a documented invariant or precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A numerical procedure could not produce a usable answer
/// (degenerate design, no interior minimum, non-convergence).
class FitError : public Error {
public:
    using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace relscale
