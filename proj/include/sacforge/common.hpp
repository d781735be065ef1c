#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sacforge {

/// All numerics run in double precision.
using Real = double;

/// Boltzmann constant over elementary charge, in volts per kelvin.
inline constexpr Real kBoltzmannOverCharge = 8.617e-5;

/// Supported junction temperature range, kelvin.
inline constexpr Real kMinTemperature = 200.0;
inline constexpr Real kMaxTemperature = 450.0;

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A constructor or setter received an out-of-range / inconsistent value.
struct ParameterError : Error {
    using Error::Error;
};

/// An iterative solve failed to converge; carries diagnostics.
struct SolveError : Error {
    Real residual = 0;
    int iterations = 0;
    SolveError(const std::string& what, Real resid, int iters)
        : Error(what), residual(resid), iterations(iters) {}
};

/// An evaluation was requested outside a block's supported range.
struct RangeError : Error {
    using Error::Error;
};

/// A calibration / fitting routine could not meet its tolerance.
struct CalibrationError : Error {
    using Error::Error;
};

/// A config file failed to parse or validate; carries the line number.
struct ConfigError : Error {
    int line = 0;
    ConfigError(const std::string& what, int line_no)
        : Error(what + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
};

/// Training diverged or hit a hard failure; carries the loss history.
struct TrainingError : Error {
    std::vector<Real> loss_history;
    TrainingError(const std::string& what, std::vector<Real> history)
        : Error(what), loss_history(std::move(history)) {}
};

}  // namespace sacforge
