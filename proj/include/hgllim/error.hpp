#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hgllim {

/// Base of every error thrown by the library. `exit_code()` is the process
/// status the CLI reports for it (2 usage, 3 data, 4 numerical).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 4; }
};

/// Caller violated a documented precondition (wrong dimensions, wrong layout).
class ContractError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// Malformed or inconsistent input data.
class DataError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

class InsufficientDataError : public DataError {
public:
    using DataError::DataError;
};

class OutOfBoundsError : public DataError {
public:
    using DataError::DataError;
};

/// A covariance could not be factored even after jittering.
class IllConditionedError : public Error {
public:
    IllConditionedError(const std::string& what, std::ptrdiff_t component)
        : Error(what + (component >= 0 ? " (component " + std::to_string(component) + ")" : std::string{})),
          component_(component) {}
    std::ptrdiff_t component() const noexcept { return component_; }

private:
    std::ptrdiff_t component_;
};

/// Every component log-density underflowed, or a density was not finite.
class DegenerateInputError : public Error {
public:
    DegenerateInputError(const std::string& what, std::ptrdiff_t sample = -1)
        : Error(what + (sample >= 0 ? " (sample " + std::to_string(sample) + ")" : std::string{})),
          sample_(sample) {}
    std::ptrdiff_t sample() const noexcept { return sample_; }

private:
    std::ptrdiff_t sample_;
};

class TrainingFailedError : public Error {
public:
    using Error::Error;
};

/// EM log-likelihood went down: a bug, not a data problem.
class ConsistencyError : public Error {
public:
    using Error::Error;
};

}  // namespace hgllim
