#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace pod_sentry {

// Base of every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input text or document could not be parsed. `location` names where the
// problem is ("line 3", "record 2", "annotation.size.width").
class ParseError : public Error {
 public:
  ParseError(std::string location, const std::string& message)
      : Error(location + ": " + message), location_(std::move(location)) {}

  const std::string& location() const noexcept { return location_; }

 private:
  std::string location_;
};

// A value violates a domain invariant (inverted box, score out of range, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Class id or name that the registry does not know.
class UnknownClassError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Two boxes in different coordinate conventions were combined.
class ConventionMismatchError : public Error {
 public:
  using Error::Error;
};

// A metric whose denominator is zero was requested.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A remote backend could not be reached or answered with a transport-level
// failure. Distinct from an empty result.
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace pod_sentry
