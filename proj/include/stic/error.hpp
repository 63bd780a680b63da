#pragma once

#include <stdexcept>
#include <string>

namespace stic {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on arguments was violated (bad sizes, out-of-range values).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Two objects that must share a mesh or time grid do not.
class DomainMismatch : public Error {
public:
    using Error::Error;
};

/// A numerical procedure could not produce a result (singular solve, etc.).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Experiment configuration is malformed or violates an invariant.
class ConfigError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
    if (!cond) throw InvalidArgument(what);
}

inline void require_same_domain(bool cond, const std::string& what) {
    if (!cond) throw DomainMismatch(what);
}

}  // namespace detail
}  // namespace stic
