#pragma once

#include <stdexcept>
#include <string>

namespace bpmot {

enum class ErrorCode {
    NotPositiveDefinite,
    EmptyWeights,
    DimensionMismatch,
    TooLarge,
    DegenerateProblem,
    DegenerateWeights,
    FormatVersionMismatch,
    ShapeMismatch,
    ConfigInvalid,
    Usage,
    MissingWeights,
    IoError,
    SchemaMismatch,
    NonFiniteLoss,
    OutOfRegion,
};

/// Exception carrying a typed error code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[nodiscard]] const char* error_name(ErrorCode code) noexcept;

/// CLI exit code for an error: 2 config/usage, 3 data, 4 numeric.
[[nodiscard]] int exit_code_for(ErrorCode code) noexcept;

}  // namespace bpmot
