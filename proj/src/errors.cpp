#include "pmr/errors.hpp"

namespace pmr {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::NoFrames: return "NoFrames";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::DecodeError: return "DecodeError";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::InvalidClip: return "InvalidClip";
        case ErrorKind::WindowTooLarge: return "WindowTooLarge";
        case ErrorKind::UnknownBackend: return "UnknownBackend";
        case ErrorKind::InvalidParams: return "InvalidParams";
        case ErrorKind::NeedsTwoFrames: return "NeedsTwoFrames";
        case ErrorKind::WindowOutOfRange: return "WindowOutOfRange";
        case ErrorKind::NoFlows: return "NoFlows";
        case ErrorKind::DomainError: return "DomainError";
        case ErrorKind::OddDimensions: return "OddDimensions";
        case ErrorKind::ShapeError: return "ShapeError";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::UnsupportedOrder: return "UnsupportedOrder";
        case ErrorKind::NoData: return "NoData";
    }
    return "Unknown";
}

}  // namespace pmr
