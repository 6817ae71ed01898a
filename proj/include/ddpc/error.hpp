#pragma once

#include <stdexcept>
#include <string>

namespace ddpc {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad dimensions, non-finite entries or out-of-range arguments.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// A Cholesky factorization hit a non-positive pivot or a non-symmetric matrix.
class FactorizationError : public Error {
public:
    using Error::Error;
};

/// Experiment data is too short for the requested horizons.
class SizingError : public Error {
public:
    using Error::Error;
};

/// The regression matrix is rank deficient (input not persistently exciting).
class ExcitationError : public Error {
public:
    using Error::Error;
};

/// An estimator that needs measured states was handed data without them.
class StateRequiredError : public Error {
public:
    using Error::Error;
};

/// The Riccati iteration did not converge.
class UnstabilizableError : public Error {
public:
    using Error::Error;
};

/// Hard-constrained QP reported infeasible inside a receding-horizon step.
class ControllerError : public Error {
public:
    ControllerError(const std::string& what, long step) : Error(what), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

/// Metric window too short or outside the recorded series.
class InvalidWindow : public Error {
public:
    using Error::Error;
};

/// Scenario configuration problem, carries section and key for diagnostics.
class ConfigError : public Error {
public:
    ConfigError(const std::string& section, const std::string& key, const std::string& msg)
        : Error("[" + section + "] " + key + ": " + msg), section_(section), key_(key) {}
    const std::string& section() const noexcept { return section_; }
    const std::string& key() const noexcept { return key_; }

private:
    std::string section_;
    std::string key_;
};

}  // namespace ddpc
