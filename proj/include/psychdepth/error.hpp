#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace psychdepth {

// Every failure the library raises carries one of these codes so the CLI and
// HTTP layers can emit a machine-readable record without parsing messages.
enum class ErrorCode {
  Parse,
  Validation,
  MissingComponent,
  Range,
  DuplicateId,
  Conflict,
  Size,
  Io,
  Join,
  Coverage,
  Precondition,
  Transport,
  Credential,
  ScriptExhausted,
  GenerationExhausted,
  Shortfall,
  PartialFailure,
  Aggregation,
  InsufficientData,
  UndefinedAlpha,
  UndefinedCorrelation,
  Undefined,
  UnknownLabel,
  Auth,
  Forbidden,
  NotFound,
  Config,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, nlohmann::json detail = nlohmann::json::object())
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const nlohmann::json& detail() const noexcept { return detail_; }

  // {"error": code, "message": ..., "detail": {...}}
  nlohmann::json to_json() const;

 private:
  ErrorCode code_;
  nlohmann::json detail_;
};

}  // namespace psychdepth
