#pragma once

#include <stdexcept>
#include <string>

namespace fracvar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid domain, field or operator arguments (bad bounds, grid mismatch, s out of range...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// A pointwise model evaluation produced a non-finite value or left the safe range.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// Iterative method hit its cap or a factorization broke down.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// Mountain-pass endpoints without the required energy drop, or no sign change along a ray.
class GeometryError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated binary/CSV/JSON payloads.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Configuration file unreadable, unparsable or failing the schema; `key` names the offending entry.
class ConfigError : public Error {
public:
    ConfigError(const std::string& key, const std::string& message)
        : Error(key.empty() ? message : key + ": " + message), key_(key) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

}  // namespace fracvar
