#include "fewshot/error.hpp"

namespace fewshot {

std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::UnknownLabel: return "UnknownLabel";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptySupport: return "EmptySupport";
    case ErrorKind::InvalidImage: return "InvalidImage";
    case ErrorKind::BadPartition: return "BadPartition";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::UnknownClass: return "UnknownClass";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::TooFewRuns: return "TooFewRuns";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind)
{
}

void fail(ErrorKind kind, const std::string& message)
{
    throw Error(kind, message);
}

}  // namespace fewshot
