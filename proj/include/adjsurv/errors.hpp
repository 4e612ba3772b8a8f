#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace adjsurv {

enum class ErrorCode {
  InvalidInput,
  EmptyRiskSet,
  NoEvents,
  DegenerateInformation,
  NoRootInBracket,
  SingularDesign,
  NonpositiveVariance,
  StratumDegenerate,
  InvalidTime,
  FeatureMismatch,
  ParseError,
  SchemaError,
  IoError,
};

/// Stable machine-readable name, used in CLI error reports.
constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "invalid_input";
    case ErrorCode::EmptyRiskSet: return "empty_risk_set";
    case ErrorCode::NoEvents: return "no_events";
    case ErrorCode::DegenerateInformation: return "degenerate_information";
    case ErrorCode::NoRootInBracket: return "no_root_in_bracket";
    case ErrorCode::SingularDesign: return "singular_design";
    case ErrorCode::NonpositiveVariance: return "nonpositive_variance";
    case ErrorCode::StratumDegenerate: return "stratum_degenerate";
    case ErrorCode::InvalidTime: return "invalid_time";
    case ErrorCode::FeatureMismatch: return "feature_mismatch";
    case ErrorCode::ParseError: return "parse_error";
    case ErrorCode::SchemaError: return "schema_error";
    case ErrorCode::IoError: return "io_error";
  }
  return "unknown";
}

/// Validation-class errors map to CLI exit code 2, the rest to 1.
constexpr bool is_validation_error(ErrorCode code) {
  return code == ErrorCode::InvalidInput || code == ErrorCode::ParseError ||
         code == ErrorCode::SchemaError || code == ErrorCode::FeatureMismatch ||
         code == ErrorCode::InvalidTime;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace adjsurv
