#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace etree {

enum class ErrorKind {
    InsufficientData,
    InvalidSubspaceSplit,
    InvalidVector,
    DimensionError,
    InvalidCode,
    ConfigError,
    PreconditionViolation,
    EmptyDataset,
    CorruptBuffer,
    MalformedFile,
    EquivalenceFailure,
    IoError,
};

/// Stable machine-readable name, used as the first token of CLI error lines.
std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& detail)
        : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind), detail_(detail) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    std::string detail_;
};

}  // namespace etree
