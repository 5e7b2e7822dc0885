#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ontoctl {

enum class ErrorKind {
  BlankInput,
  EmptyNode,
  EmptyDataset,
  UnknownLabel,
  SyntaxError,
  UnknownDescriptor,
  UnknownClass,
  EmptyRuleSet,
  MissingDescriptor,
  NoRuleMatches,
  AmbiguousMatch,
  InvalidStrategy,
  BackendUnavailable,
  ReservedPattern,
  UnannotatedRecord,
  UnannotatedCorpus,
  UnknownTemplate,
  Timeout,
  HttpError,
  MalformedResponse,
  ConnectionFailed,
  EmptyPairs,
  NotOrdinal,
  UnknownSession,
  InvalidArgument,
  Io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::BlankInput: return "BlankInput";
    case ErrorKind::EmptyNode: return "EmptyNode";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::UnknownLabel: return "UnknownLabel";
    case ErrorKind::SyntaxError: return "SyntaxError";
    case ErrorKind::UnknownDescriptor: return "UnknownDescriptor";
    case ErrorKind::UnknownClass: return "UnknownClass";
    case ErrorKind::EmptyRuleSet: return "EmptyRuleSet";
    case ErrorKind::MissingDescriptor: return "MissingDescriptor";
    case ErrorKind::NoRuleMatches: return "NoRuleMatches";
    case ErrorKind::AmbiguousMatch: return "AmbiguousMatch";
    case ErrorKind::InvalidStrategy: return "InvalidStrategy";
    case ErrorKind::BackendUnavailable: return "BackendUnavailable";
    case ErrorKind::ReservedPattern: return "ReservedPattern";
    case ErrorKind::UnannotatedRecord: return "UnannotatedRecord";
    case ErrorKind::UnannotatedCorpus: return "UnannotatedCorpus";
    case ErrorKind::UnknownTemplate: return "UnknownTemplate";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::HttpError: return "HttpError";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::ConnectionFailed: return "ConnectionFailed";
    case ErrorKind::EmptyPairs: return "EmptyPairs";
    case ErrorKind::NotOrdinal: return "NotOrdinal";
    case ErrorKind::UnknownSession: return "UnknownSession";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Base exception for every failure the library reports. The kind is the
/// machine-readable part; what() carries the human diagnostic.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The diagnostic without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

/// Failure talking to an external completion service.
class GatewayError : public Error {
 public:
  GatewayError(ErrorKind kind, const std::string& message, std::string request_id, int status = 0)
      : Error(kind, message + " (request " + request_id + ")"),
        request_id_(std::move(request_id)),
        status_(status) {}

  const std::string& request_id() const noexcept { return request_id_; }
  int status() const noexcept { return status_; }

 private:
  std::string request_id_;
  int status_;
};

}  // namespace ontoctl
