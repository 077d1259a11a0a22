#pragma once

#include <stdexcept>
#include <string>

namespace vulnir {

// Failure classes map onto CLI exit codes: Usage -> 2, Data -> 1, Internal -> 3.
enum class ErrorKind { Usage, Data, Internal };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& msg) : Error(ErrorKind::Usage, msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(ErrorKind::Usage, msg) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

struct InvariantViolation : Error {
  explicit InvariantViolation(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

struct MalformedFunctionBlock : Error {
  explicit MalformedFunctionBlock(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

struct LabelOnRemovedLine : Error {
  explicit LabelOnRemovedLine(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

struct EmptyCorpus : Error {
  explicit EmptyCorpus(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

struct MalformedSequence : Error {
  explicit MalformedSequence(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

struct EmptyClass : Error {
  explicit EmptyClass(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

struct EmptyTestSet : Error {
  explicit EmptyTestSet(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

struct DegenerateSplit : Error {
  explicit DegenerateSplit(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& msg) : Error(ErrorKind::Internal, msg) {}
};

struct IdOutOfRange : Error {
  explicit IdOutOfRange(const std::string& msg) : Error(ErrorKind::Internal, msg) {}
};

struct OddDimension : Error {
  explicit OddDimension(const std::string& msg) : Error(ErrorKind::Internal, msg) {}
};

struct NonFiniteGradient : Error {
  explicit NonFiniteGradient(const std::string& msg) : Error(ErrorKind::Internal, msg) {}
};

inline int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Usage: return 2;
    case ErrorKind::Data: return 1;
    case ErrorKind::Internal: return 3;
  }
  return 3;
}

}  // namespace vulnir
