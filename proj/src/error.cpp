#include "psychdepth/error.hpp"

namespace psychdepth {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::MissingComponent: return "missing_component";
    case ErrorCode::Range: return "range";
    case ErrorCode::DuplicateId: return "duplicate_id";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::Size: return "size";
    case ErrorCode::Io: return "io";
    case ErrorCode::Join: return "join";
    case ErrorCode::Coverage: return "coverage";
    case ErrorCode::Precondition: return "precondition";
    case ErrorCode::Transport: return "transport";
    case ErrorCode::Credential: return "credential";
    case ErrorCode::ScriptExhausted: return "script_exhausted";
    case ErrorCode::GenerationExhausted: return "generation_exhausted";
    case ErrorCode::Shortfall: return "shortfall";
    case ErrorCode::PartialFailure: return "partial_failure";
    case ErrorCode::Aggregation: return "aggregation";
    case ErrorCode::InsufficientData: return "insufficient_data";
    case ErrorCode::UndefinedAlpha: return "undefined_alpha";
    case ErrorCode::UndefinedCorrelation: return "undefined_correlation";
    case ErrorCode::Undefined: return "undefined";
    case ErrorCode::UnknownLabel: return "unknown_label";
    case ErrorCode::Auth: return "auth";
    case ErrorCode::Forbidden: return "forbidden";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::Config: return "config";
  }
  return "unknown";
}

nlohmann::json Error::to_json() const {
  return {{"error", std::string(to_string(code_))}, {"message", what()}, {"detail", detail_}};
}

}  // namespace psychdepth
