#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fewshot {

enum class ErrorKind {
    UnknownLabel,
    DimensionMismatch,
    ShapeMismatch,
    EmptySupport,
    InvalidImage,
    BadPartition,
    InsufficientData,
    UnknownClass,
    EmptyClass,
    TooFewRuns,
    DivergenceDetected,
    ConfigMismatch,
    InvalidArgument,
    Io,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` carries the failure class.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message)
{
    if (!condition)
        fail(kind, message);
}

}  // namespace fewshot
