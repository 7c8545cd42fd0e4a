#pragma once

#include <stdexcept>
#include <string>

namespace vcrobust {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class EmptyRegionError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class SpecError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class DegenerateBoxError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class EmptySetError : public Error { using Error::Error; };
class UndefinedPdrError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };

/// Network failure or timeout. Retryable.
class TransportError : public Error { using Error::Error; };

/// The remote answered with HTTP status >= 400.
class EndpointError : public Error {
 public:
  EndpointError(int status, const std::string& what)
      : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

/// A remote judge returned something that is not a YES/NO verdict.
class JudgeError : public Error { using Error::Error; };

/// Malformed input line; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace vcrobust
