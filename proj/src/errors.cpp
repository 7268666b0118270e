#include "stdmarg/errors.hpp"

namespace stdmarg {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::EmptyArm: return "EmptyArm";
    case ErrorKind::InvalidFamilyData: return "InvalidFamilyData";
    case ErrorKind::RankDeficientDesign: return "RankDeficientDesign";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::NonNumericValue: return "NonNumericValue";
    case ErrorKind::MissingValue: return "MissingValue";
    case ErrorKind::NonPositiveFollowup: return "NonPositiveFollowup";
    case ErrorKind::NonPositiveEstimateForLogScale: return "NonPositiveEstimateForLogScale";
    case ErrorKind::OddBlockForProbabilities: return "OddBlockForProbabilities";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::SeparationDetected: return "SeparationDetected";
    case ErrorKind::SingularBread: return "SingularBread";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::SimulationAborted: return "SimulationAborted";
  }
  return "Unknown";
}

bool is_convergence_error(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::NonConvergence:
    case ErrorKind::SeparationDetected:
    case ErrorKind::SingularBread:
    case ErrorKind::NotConverged:
    case ErrorKind::SimulationAborted:
      return true;
    default:
      return false;
  }
}

}  // namespace stdmarg
