#pragma once

#include <stdexcept>
#include <string>

namespace maestro {

enum class ErrorCode {
  // task graph
  CycleDetected,
  DanglingEdge,
  MissingFinalNode,
  DuplicateNodeId,
  EmptyNodeText,
  UnlistedPlaceholder,
  UnreachableNode,
  ParseError,
  // agent database
  DimensionMismatch,
  RewardOutOfRange,
  NegativeCost,
  DuplicateAgentId,
  MissingField,
  EmptyDatabase,
  VersionMismatch,
  // selection
  BackendFailure,
  AllCandidatesFailed,
  // reward
  NoAnswerFound,
  EndpointUnreachable,
  MalformedScore,
  MissingGroundTruth,
  // backends
  UnresolvedPlaceholder,
  Timeout,
  HttpError,
  MalformedResponse,
  UnknownDomain,
  EmptyText,
  // synthesis
  InvalidSize,
  DegenerateUpstream,
  SpanMismatch,
  PoolTooSmall,
  // pipelines / cli
  IdMismatch,
  ConfigError,
  IoError,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::DanglingEdge: return "DanglingEdge";
    case ErrorCode::MissingFinalNode: return "MissingFinalNode";
    case ErrorCode::DuplicateNodeId: return "DuplicateNodeId";
    case ErrorCode::EmptyNodeText: return "EmptyNodeText";
    case ErrorCode::UnlistedPlaceholder: return "UnlistedPlaceholder";
    case ErrorCode::UnreachableNode: return "UnreachableNode";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::RewardOutOfRange: return "RewardOutOfRange";
    case ErrorCode::NegativeCost: return "NegativeCost";
    case ErrorCode::DuplicateAgentId: return "DuplicateAgentId";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::EmptyDatabase: return "EmptyDatabase";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::AllCandidatesFailed: return "AllCandidatesFailed";
    case ErrorCode::NoAnswerFound: return "NoAnswerFound";
    case ErrorCode::EndpointUnreachable: return "EndpointUnreachable";
    case ErrorCode::MalformedScore: return "MalformedScore";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::UnresolvedPlaceholder: return "UnresolvedPlaceholder";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::HttpError: return "HttpError";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::UnknownDomain: return "UnknownDomain";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::InvalidSize: return "InvalidSize";
    case ErrorCode::DegenerateUpstream: return "DegenerateUpstream";
    case ErrorCode::SpanMismatch: return "SpanMismatch";
    case ErrorCode::PoolTooSmall: return "PoolTooSmall";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

/// Exception type used across the library; carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace maestro
