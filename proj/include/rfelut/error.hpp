#pragma once

#include <stdexcept>
#include <string>

namespace rfelut {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class DimensionTooLarge : public Error {
public:
    using Error::Error;
};

class StorageOverflow : public Error {
public:
    using Error::Error;
};

class IndexOutOfBounds : public Error {
public:
    using Error::Error;
};

class InvalidPattern : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

class BudgetError : public Error {
public:
    using Error::Error;
};

class FidelityError : public Error {
public:
    using Error::Error;
};

class EmptySetError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Raised by table deserialization. Each corruption class has its own kind.
class ParseError : public Error {
public:
    enum class Kind { BadMagic, VersionMismatch, Truncated, LengthMismatch, BadChecksum, BadHeader, BadValue };

    ParseError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace rfelut
