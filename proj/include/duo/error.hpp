#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace duo {

enum class ErrorKind {
  kDomain,
  kParameter,
  kNumeric,
  kEndpoint,
  kState,
  kIndex,
  kSingularity,
  kOrdering,
  kShape,
  kCapability,
  kParse,
  kSize,
  kInsufficientSamples,
  kWitness,
  kIo,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kParameter: return "parameter";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kEndpoint: return "endpoint";
    case ErrorKind::kState: return "state";
    case ErrorKind::kIndex: return "index";
    case ErrorKind::kSingularity: return "singularity";
    case ErrorKind::kOrdering: return "ordering";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kCapability: return "capability";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kSize: return "size";
    case ErrorKind::kInsufficientSamples: return "insufficient-samples";
    case ErrorKind::kWitness: return "witness";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Quadrature failure; carries the error estimate that was reached.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, double achieved_error)
      : Error(ErrorKind::kNumeric, what + " (achieved error estimate " + std::to_string(achieved_error) + ")"),
        achieved_error_(achieved_error) {}

  double achieved_error() const noexcept { return achieved_error_; }

 private:
  double achieved_error_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::kParse, "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class InsufficientSamplesError : public Error {
 public:
  InsufficientSamplesError(std::size_t accepted, std::size_t required)
      : Error(ErrorKind::kInsufficientSamples,
              "accepted " + std::to_string(accepted) + " draws, need at least " + std::to_string(required)),
        accepted_(accepted) {}

  std::size_t accepted() const noexcept { return accepted_; }

 private:
  std::size_t accepted_;
};

namespace detail {

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace detail
}  // namespace duo
