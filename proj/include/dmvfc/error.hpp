#pragma once

#include <stdexcept>
#include <string>

namespace dmvfc {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input that is well-formed but geometrically or statistically degenerate
// (zero-length polyline, zero-variance series, ...).
class DegenerateInput : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

// Non-finite loss or gradient during training.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace dmvfc
