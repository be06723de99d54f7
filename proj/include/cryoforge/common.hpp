#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include <fmt/format.h>

namespace cryoforge {

#ifdef CRYOFORGE_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An argument or invariant was violated (non-rotation matrix, odd side, sigma <= 0, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// File could not be read, written or validated.
class IoError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered, or a numerical contract (e.g. imaginary leakage) broke.
class NumericalError : public Error {
public:
    using Error::Error;
};

template<typename E = DomainError, typename... Args>
void check(bool condition, fmt::format_string<Args...> format, Args&&... args) {
    if (!condition)
        throw E(fmt::format(format, std::forward<Args>(args)...));
}

} // namespace cryoforge
