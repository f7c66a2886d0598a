#pragma once

#include <stdexcept>
#include <string>

namespace pmr {

enum class ErrorKind {
    NoFrames,
    ShapeMismatch,
    DecodeError,
    IoError,
    InvalidClip,
    WindowTooLarge,
    UnknownBackend,
    InvalidParams,
    NeedsTwoFrames,
    WindowOutOfRange,
    NoFlows,
    DomainError,
    OddDimensions,
    ShapeError,
    ConfigError,
    UnsupportedOrder,
    NoData,
};

const char* to_string(ErrorKind kind) noexcept;

/// Every failure in the library is reported through this type; `kind()`
/// identifies the contract that was violated.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace pmr
