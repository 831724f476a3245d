#pragma once

#include <stdexcept>
#include <string>

namespace cwsl {

enum class ErrorKind {
  InvalidInterval,
  ZeroParameter,
  RegularityViolation,
  AngleOrderViolation,
  OnInterface,
  ToleranceNotMet,
  NonFinite,
  NearEigenvalue,
  MultipleZeroDetected,
  CountMismatch,
  SeedDivergence,
  UndefinedConstants,
  InsufficientSamples,
  NoConvergence,
  NonRealGeometry,
  DegenerateRatio,
  MisalignedData,
  MissingTrace,
  DroppedAll,
  SingularSystem,
  TailTooLarge,
  NoUsableIndex,
  InconsistentEstimates,
  InvalidArgument,
  Io,
  Schema,
};

const char* to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it onto an exit code without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

  /// Message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

  /// Pipeline stage that raised the error, empty when not wrapped.
  const std::string& stage() const noexcept { return stage_; }

  /// Re-throws a copy of `e` tagged with `stage`.
  [[noreturn]] static void rethrow_in_stage(const Error& e, const std::string& stage);

 private:
  Error(ErrorKind kind, const std::string& detail, const std::string& stage);

  ErrorKind kind_;
  std::string detail_;
  std::string stage_;
};

}  // namespace cwsl
