#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace matkit {

// Root of the library's error hierarchy. Every throw in matkit uses a
// subclass of Error so callers can catch by kind or catch everything.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dimension or shape mismatch between containers that must agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A numeric argument violates a documented precondition (ordering, range,
// emptiness) without being a shape problem.
class ValueError : public Error {
public:
    using Error::Error;
};

// An iterative routine exhausted its budget. Carries the last residual so
// callers can judge how far from convergence it stopped.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

// Non-finite value produced or encountered. sample_index() is >= 0 when the
// failure is attributable to one sample of a batch, -1 otherwise.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what, std::ptrdiff_t sample_index = -1)
        : Error(what), sample_index_(sample_index) {}
    std::ptrdiff_t sample_index() const { return sample_index_; }

private:
    std::ptrdiff_t sample_index_;
};

// Invalid architecture descriptor, run spec, or config value.
class SpecError : public Error {
public:
    using Error::Error;
};

// Unknown module id or missing key.
class LookupError : public Error {
public:
    using Error::Error;
};

// Operation called in a state that does not support it yet (e.g. temporal
// test before the needed history exists).
class StateError : public Error {
public:
    using Error::Error;
};

// Artifacts from different runs do not share a comparable schema.
class CompatibilityError : public Error {
public:
    using Error::Error;
};

// Pruning would leave a layer with no modules while layer protection is on.
class ProtectionError : public Error {
public:
    using Error::Error;
};

// Filesystem-level failure (lock held, unwritable directory, missing file).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace matkit
