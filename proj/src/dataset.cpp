#include "stdmarg/dataset.hpp"

#include <string>
#include <utility>

#include "stdmarg/errors.hpp"

namespace stdmarg {

TrialDataset::TrialDataset(Eigen::VectorXd y, Eigen::MatrixXd x, std::vector<int> z, int k)
    : outcome(std::move(y)), covariates(std::move(x)), arm(std::move(z)), num_arms(k) {
  followup = Eigen::VectorXd::Ones(outcome.size());
  validate();
}

TrialDataset::TrialDataset(Eigen::VectorXd y, Eigen::MatrixXd x, std::vector<int> z,
                           Eigen::VectorXd t, int k)
    : outcome(std::move(y)), covariates(std::move(x)), arm(std::move(z)),
      followup(std::move(t)), num_arms(k) {
  validate();
}

void TrialDataset::validate() const {
  const auto n = outcome.size();
  if (covariates.rows() != n || static_cast<Eigen::Index>(arm.size()) != n ||
      followup.size() != n) {
    throw Error(ErrorKind::DimensionMismatch,
                "outcome, covariates, arm and followup must have the same number of rows");
  }
  if (num_arms < 2) throw Error(ErrorKind::InvalidArgument, "need at least two arms");
  for (Eigen::Index i = 0; i < n; ++i) {
    const int z = arm[static_cast<std::size_t>(i)];
    if (z < 0 || z >= num_arms) {
      throw Error(ErrorKind::InvalidArgument,
                  "row " + std::to_string(i) + ": arm index " + std::to_string(z) +
                      " outside [0, " + std::to_string(num_arms) + ")");
    }
    if (!(followup[i] > 0.0)) {
      throw Error(ErrorKind::NonPositiveFollowup,
                  "row " + std::to_string(i) + ": follow-up time must be > 0");
    }
  }
}

bool TrialDataset::unit_followup() const noexcept {
  return (followup.array() == 1.0).all();
}

std::size_t TrialDataset::arm_count(int z) const noexcept {
  std::size_t count = 0;
  for (int a : arm) count += (a == z);
  return count;
}

double TrialDataset::arm_followup_total(int z) const noexcept {
  double total = 0.0;
  for (std::size_t i = 0; i < arm.size(); ++i) {
    if (arm[i] == z) total += followup[static_cast<Eigen::Index>(i)];
  }
  return total;
}

}  // namespace stdmarg
