#pragma once

#include <stdexcept>
#include <string>

namespace ovsim {

/// Failure categories. The CLI maps them onto exit codes.
enum class ErrorKind {
    domain,     // negative or nonfinite input where the model needs >= 0
    dimension,  // field shapes disagree
    state,      // malformed or empty state
    step,       // dt violates the stability bound
    positivity, // a field went negative beyond the clip tolerance
    fit,        // decay fit preconditions failed
    config,     // bad configuration document or flag
    io          // filesystem / format problems
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct DomainError : Error {
    explicit DomainError(const std::string& w) : Error(ErrorKind::domain, w) {}
};
struct DimensionError : Error {
    explicit DimensionError(const std::string& w) : Error(ErrorKind::dimension, w) {}
};
struct StateError : Error {
    explicit StateError(const std::string& w) : Error(ErrorKind::state, w) {}
};
struct StepError : Error {
    explicit StepError(const std::string& w) : Error(ErrorKind::step, w) {}
};
struct PositivityError : Error {
    explicit PositivityError(const std::string& w) : Error(ErrorKind::positivity, w) {}
};
struct FitError : Error {
    explicit FitError(const std::string& w) : Error(ErrorKind::fit, w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};

} // namespace ovsim
