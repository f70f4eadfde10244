#pragma once

#include <stdexcept>
#include <string>

namespace deepview {

/// Root of every error raised by the engine. The CLI maps `ValidationError`
/// subclasses to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class DimensionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ParameterError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DegenerateLabelsError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DegenerateGeometryError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class UnsupportedError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class NeighborhoodExhaustedError : public Error {
public:
    using Error::Error;
};

class FitError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Failure talking to an external classifier. `payload()` holds the raw reply
/// (possibly empty) so callers can report what the backend actually sent.
class BackendError : public Error {
public:
    BackendError(const std::string& what, std::string payload = {})
        : Error(what), payload_(std::move(payload)) {}

    const std::string& payload() const noexcept { return payload_; }

private:
    std::string payload_;
};

}  // namespace deepview
