#pragma once

#include <stdexcept>
#include <string>

namespace aggload {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A mode label outside the model's mode set, or a model contract breach
/// (negative hazard, malformed parameter vector).
class ModelError : public Error {
public:
    using Error::Error;
};

/// Non-finite state produced by the SDE integrator.
class NumericalBlowupError : public Error {
public:
    using Error::Error;
};

/// Two jumps closer than the configured Zeno guard.
class ZenoError : public Error {
public:
    using Error::Error;
};

/// Requested time step exceeds the explicit-scheme stability bound.
class CflError : public Error {
public:
    CflError(const std::string& what, double admissible_dt)
        : Error(what), admissible_dt_(admissible_dt) {}
    [[nodiscard]] double admissible_dt() const noexcept { return admissible_dt_; }

private:
    double admissible_dt_;
};

/// Inconsistent domain partition: mass routed to a missing cell, flux
/// injected on a face that has no interface entry, degenerate resolution.
class PartitionError : public Error {
public:
    using Error::Error;
};

/// Total probability mass drifted beyond tolerance.
class ConservationError : public Error {
public:
    using Error::Error;
};

/// Structural mismatch between fields or series (grids, time axes).
class StructureError : public Error {
public:
    using Error::Error;
};

/// Invalid scenario configuration; the message names the offending key.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace aggload
