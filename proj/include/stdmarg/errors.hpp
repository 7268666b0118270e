#pragma once

#include <stdexcept>
#include <string>

namespace stdmarg {

enum class ErrorKind {
  // data / configuration
  InvalidArgument,
  DimensionMismatch,
  EmptyArm,
  InvalidFamilyData,
  RankDeficientDesign,
  MissingColumn,
  NonNumericValue,
  MissingValue,
  NonPositiveFollowup,
  NonPositiveEstimateForLogScale,
  OddBlockForProbabilities,
  InvalidConfig,
  // numerical
  NonConvergence,
  SeparationDetected,
  SingularBread,
  NotConverged,
  SimulationAborted,
};

const char* to_string(ErrorKind kind) noexcept;

/// True for failures of the numerical machinery rather than bad input.
bool is_convergence_error(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), detail_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

}  // namespace stdmarg
