#pragma once

#include <stdexcept>
#include <string>

namespace evi {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched vector/grid sizes.
struct DimensionError : Error {
    using Error::Error;
};

// Argument outside the admissible range (p < 2, nonpositive tau, ...).
struct ParameterError : Error {
    using Error::Error;
};

// Input outside the operator's domain (empty set, nonfinite entries, ...).
struct DomainError : Error {
    using Error::Error;
};

// Overflow / NaN produced during evaluation.
struct NumericError : Error {
    using Error::Error;
};

// Config file problems; carries the offending field or line when known.
struct ConfigError : Error {
    std::string field;
    int line = 0;
    ConfigError(const std::string& msg, std::string fld = {}, int ln = 0)
        : Error(msg), field(std::move(fld)), line(ln) {}
};

// An iteration failed to meet its tolerance; carries the last residual.
struct ConvergenceError : Error {
    double last_residual = 0.0;
    long step_index = -1;   // time step where the failure happened, if any
    long iterations = 0;
    ConvergenceError(const std::string& msg, double residual, long step, long iters)
        : Error(msg), last_residual(residual), step_index(step), iterations(iters) {}
};

}  // namespace evi
