#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace promptopt {

// Every domain failure the library can raise. The enumerator spelling is the
// public error name used by the CLI, the HTTP service, and persisted logs.
enum class ErrorCode {
  // providers
  AuthError,
  RateLimited,
  ProviderError,
  Timeout,
  DuplicateKey,
  // config
  ExtractionParseError,
  ClassificationError,
  SchemaError,
  SelectionError,
  // synthgen
  BudgetTooSmall,
  GenerationStalled,
  SplitError,
  // metrics
  LengthMismatch,
  EmptyExampleSet,
  // optimizer
  MetaParseError,
  ProposalParseError,
  EmptyValidationSet,
  // session
  StorageError,
  OffsetOutOfRange,
  UnknownTarget,
  NoUnresolvedFeedback,
  ReoptimizationNotRequired,
  JudgeParseError,
  NotFound,
  SchemaVersionMismatch,
  // interface
  ValidationError,
  JobInFlight,
  QueueFull,
};

inline constexpr std::array<std::string_view, 28> kErrorNames = {
    "AuthError",          "RateLimited",
    "ProviderError",      "Timeout",
    "DuplicateKey",       "ExtractionParseError",
    "ClassificationError", "SchemaError",
    "SelectionError",     "BudgetTooSmall",
    "GenerationStalled",  "SplitError",
    "LengthMismatch",     "EmptyExampleSet",
    "MetaParseError",     "ProposalParseError",
    "EmptyValidationSet", "StorageError",
    "OffsetOutOfRange",   "UnknownTarget",
    "NoUnresolvedFeedback", "ReoptimizationNotRequired",
    "JudgeParseError",    "NotFound",
    "SchemaVersionMismatch", "ValidationError",
    "JobInFlight",        "QueueFull",
};

static_assert(static_cast<std::size_t>(ErrorCode::QueueFull) + 1 ==
              kErrorNames.size());

constexpr std::string_view error_name(ErrorCode code) {
  return kErrorNames[static_cast<std::size_t>(code)];
}

inline std::optional<ErrorCode> error_code_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kErrorNames.size(); ++i) {
    if (kErrorNames[i] == name) return static_cast<ErrorCode>(i);
  }
  return std::nullopt;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_name(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace promptopt
