#pragma once

#include <stdexcept>
#include <string>

namespace mbridge {

/// Base for every error thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
  using Error::Error;
};

/// Non-finite (NaN/Inf) values where finite input is required.
struct NumericError : Error {
  using Error::Error;
};

/// Scalar expected (e.g. backward on a non-scalar loss).
struct RankError : Error {
  using Error::Error;
};

/// An attention query row with every key masked out.
struct DegenerateMaskError : Error {
  using Error::Error;
};

/// Loss requested over an empty mask.
struct EmptyLossError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

/// Sample/stage combination not allowed (e.g. multi-modality sample in stage 1).
struct StageMismatchError : Error {
  using Error::Error;
};

/// Sequence longer than the model context.
struct ContextOverflowError : Error {
  using Error::Error;
};

/// Prompt template placeholders do not match the sample's modalities.
struct TemplateError : Error {
  using Error::Error;
};

/// Missing template coverage for a (modality, kind) combination.
struct CoverageError : Error {
  using Error::Error;
};

/// Corrupt, truncated or version-mismatched file.
struct LoadError : Error {
  using Error::Error;
};

/// Schema violation in a dataset file; carries the offending line.
struct ValidationError : Error {
  ValidationError(const std::string& msg, long line)
      : Error(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
  long line_number;
};

struct EvalError : Error {
  using Error::Error;
};

struct TransportError : Error {
  using Error::Error;
};

struct TimeoutError : TransportError {
  using TransportError::TransportError;
};

/// Non-2xx reply from a remote chat endpoint.
struct RemoteError : Error {
  RemoteError(int status_code, const std::string& body)
      : Error("remote error, status " + std::to_string(status_code) + ": " + body),
        status(status_code),
        response_body(body) {}
  int status;
  std::string response_body;
};

}  // namespace mbridge
