#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace consensus_opt {

enum class ErrorCode {
    NegativeOffDiagonal,
    RowSumViolation,
    NotSquare,
    NonFinite,
    DimensionMismatch,
    EmptySystem,
    InvalidPermutation,
    SimplexViolation,
    InvalidControl,
    TerminalNotZeroSum,
    Overflow,
    BasisNotAdapted,
    DimensionNotTwo,
    DimensionNotThree,
    RequiresTwoSubsystems,
    NotHurwitz,
    InvalidArgument,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::NegativeOffDiagonal: return "NegativeOffDiagonal";
    case ErrorCode::RowSumViolation: return "RowSumViolation";
    case ErrorCode::NotSquare: return "NotSquare";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptySystem: return "EmptySystem";
    case ErrorCode::InvalidPermutation: return "InvalidPermutation";
    case ErrorCode::SimplexViolation: return "SimplexViolation";
    case ErrorCode::InvalidControl: return "InvalidControl";
    case ErrorCode::TerminalNotZeroSum: return "TerminalNotZeroSum";
    case ErrorCode::Overflow: return "Overflow";
    case ErrorCode::BasisNotAdapted: return "BasisNotAdapted";
    case ErrorCode::DimensionNotTwo: return "DimensionNotTwo";
    case ErrorCode::DimensionNotThree: return "DimensionNotThree";
    case ErrorCode::RequiresTwoSubsystems: return "RequiresTwoSubsystems";
    case ErrorCode::NotHurwitz: return "NotHurwitz";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Library error. `row`/`col` are 0-based and only meaningful for matrix-entry errors.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what, std::ptrdiff_t row = -1, std::ptrdiff_t col = -1)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), row_(row), col_(col) {}

    ErrorCode code() const noexcept { return code_; }
    std::ptrdiff_t row() const noexcept { return row_; }
    std::ptrdiff_t col() const noexcept { return col_; }

private:
    ErrorCode code_;
    std::ptrdiff_t row_;
    std::ptrdiff_t col_;
};

} // namespace consensus_opt
