#pragma once

#include <stdexcept>
#include <string>

namespace cpcl {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor/operator shape disagreements.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid values or misuse of an operation (non-binary masks, backward on a
// non-scalar, constant image passed to normalize, ...).
class ValueError : public Error {
public:
    using Error::Error;
};

// Malformed config file or command-line usage. CLI exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

// NaN/Inf detected during training. CLI exit code 4.
class NumericalError : public Error {
public:
    using Error::Error;
};

// File I/O failures with a distinct kind per failure mode. CLI exit code 3.
class IoError : public Error {
public:
    enum class Kind {
        open_failed,
        write_failed,
        bad_magic,
        bad_version,
        truncated,
        bad_shape,
    };

    IoError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

}  // namespace cpcl
