#include "gps/error.hpp"

namespace gps {

int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Config:
        case ErrorKind::Dimension:
        case ErrorKind::Contract:
        case ErrorKind::State:
            return 2;
        case ErrorKind::Input:
        case ErrorKind::Format:
        case ErrorKind::Compatibility:
            return 3;
        case ErrorKind::Numeric:
            return 4;
        case ErrorKind::Integrity:
            return 5;
    }
    return 1;
}

const char* kind_name(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Config: return "config";
        case ErrorKind::Dimension: return "dimension";
        case ErrorKind::Contract: return "contract";
        case ErrorKind::State: return "state";
        case ErrorKind::Input: return "input";
        case ErrorKind::Format: return "format";
        case ErrorKind::Compatibility: return "compatibility";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::Integrity: return "integrity";
    }
    return "unknown";
}

}  // namespace gps
