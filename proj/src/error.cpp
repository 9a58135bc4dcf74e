#include "codir/error.hpp"

namespace codir {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Dimension: return "dimension";
        case ErrorKind::Parameter: return "parameter";
        case ErrorKind::DegenerateVector: return "degenerate-vector";
        case ErrorKind::Input: return "input";
        case ErrorKind::State: return "state";
        case ErrorKind::Sampling: return "sampling";
        case ErrorKind::Bounds: return "bounds";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::Config: return "config";
        case ErrorKind::Io: return "io";
        case ErrorKind::Format: return "format";
    }
    return "unknown";
}

int exit_code(ErrorKind kind) {
    // 1 is reserved for unexpected exceptions, 2 for usage errors.
    return 10 + static_cast<int>(kind);
}

}  // namespace codir
