#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace apr {

enum class ErrorKind {
    ZeroVector,
    DimensionMismatch,
    EmptyBatch,
    NonFinite,
    NonFiniteGradient,
    OutOfRange,
    StepOutOfRange,
    EmptyDataset,
    UnknownDoc,
    MissingQuery,
    Parse,
    MissingField,
    DanglingId,
    Validation,
    SpecInfeasible,
    CheckpointMismatch,
    Config,
    Io,
    Format,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::StepOutOfRange: return "StepOutOfRange";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::UnknownDoc: return "UnknownDoc";
    case ErrorKind::MissingQuery: return "MissingQuery";
    case ErrorKind::Parse: return "Parse";
    case ErrorKind::MissingField: return "MissingField";
    case ErrorKind::DanglingId: return "DanglingId";
    case ErrorKind::Validation: return "Validation";
    case ErrorKind::SpecInfeasible: return "SpecInfeasible";
    case ErrorKind::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorKind::Config: return "Config";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Format: return "Format";
    }
    return "Unknown";
}

/// Every failure raised by the library. `kind()` is stable and is what the
/// CLI maps onto exit codes.
class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), m_kind(kind)
    {}

    [[nodiscard]] ErrorKind kind() const noexcept { return m_kind; }

  private:
    ErrorKind m_kind;
};

}  // namespace apr
