#include "etree/error.hpp"

namespace etree {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InsufficientData: return "insufficient data";
        case ErrorKind::InvalidSubspaceSplit: return "invalid subspace split";
        case ErrorKind::InvalidVector: return "invalid vector";
        case ErrorKind::DimensionError: return "dimension error";
        case ErrorKind::InvalidCode: return "invalid code";
        case ErrorKind::ConfigError: return "config error";
        case ErrorKind::PreconditionViolation: return "precondition violation";
        case ErrorKind::EmptyDataset: return "empty dataset";
        case ErrorKind::CorruptBuffer: return "corrupt buffer";
        case ErrorKind::MalformedFile: return "malformed file";
        case ErrorKind::EquivalenceFailure: return "equivalence failure";
        case ErrorKind::IoError: return "io error";
    }
    return "unknown";
}

}  // namespace etree
