#pragma once

#include <stdexcept>
#include <string>

namespace grood {

/// Root of every exception thrown by the library. The three families below map
/// one-to-one onto the CLI exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing/unreadable files and malformed on-disk data.
class InputError : public Error {
public:
    using Error::Error;
};

/// Contract violations: dimension mismatches, bad indices, invalid configs.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Arithmetic that could not produce a usable result.
class NumericError : public Error {
public:
    using Error::Error;
};

enum class LoadErrorKind { BadMagic, VersionMismatch, Truncated, NonFinite, Empty, BadLabel };

class LoadError : public InputError {
public:
    LoadError(LoadErrorKind kind, const std::string& what) : InputError(what), kind_(kind) {}
    LoadErrorKind kind() const noexcept { return kind_; }

private:
    LoadErrorKind kind_;
};

} // namespace grood
