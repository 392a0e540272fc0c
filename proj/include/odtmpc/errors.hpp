#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace odtmpc {

/// Failure categories surfaced by the library. The CLI maps each category to
/// an exit code (validation 2, numerical 3, I/O 4).
enum class Errc {
  InvalidArgument,
  NonConvergent,
  Infeasible,
  MaxIterations,
  TooLarge,
  NotCovered,
  NotSeparable,
  TooManyPoints,
  AllInfeasible,
  Diverged,
  TooShort,
  ControllerFailure,
  DegenerateSplit,
  SchemaMismatch,
  Io,
};

enum class ErrorKind { Validation, Numerical, Io };

constexpr ErrorKind kind_of(Errc code) {
  switch (code) {
    case Errc::InvalidArgument:
    case Errc::TooLarge:
    case Errc::TooManyPoints:
    case Errc::TooShort:
      return ErrorKind::Validation;
    case Errc::SchemaMismatch:
    case Errc::Io:
      return ErrorKind::Io;
    default:
      return ErrorKind::Numerical;
  }
}

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }
  ErrorKind kind() const noexcept { return kind_of(code_); }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(Errc::InvalidArgument, what);
}

}  // namespace odtmpc
