#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rumkit {

using ExampleId = std::int64_t;

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A file could not be parsed or violates its schema.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Training or unlearning produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int epoch, int step)
        : Error(what), epoch_(epoch), step_(step) {}
    int epoch() const noexcept { return epoch_; }
    int step() const noexcept { return step_; }

private:
    int epoch_;
    int step_;
};

/// A quantity is undefined for the given input (e.g. coincident centroids).
class DegenerateError : public Error {
public:
    using Error::Error;
};

}  // namespace rumkit
