#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace stdmarg {

/// Per-patient trial data stored column-wise.
///
/// `covariates` is n x p and already expanded (indicators for categorical
/// levels); `arm` holds indices in [0, num_arms); `followup` defaults to 1.
struct TrialDataset {
  Eigen::VectorXd outcome;
  Eigen::MatrixXd covariates;
  std::vector<int> arm;
  Eigen::VectorXd followup;
  int num_arms = 2;

  TrialDataset() = default;
  TrialDataset(Eigen::VectorXd y, Eigen::MatrixXd x, std::vector<int> z, int k);
  TrialDataset(Eigen::VectorXd y, Eigen::MatrixXd x, std::vector<int> z, Eigen::VectorXd t, int k);

  std::size_t size() const noexcept { return static_cast<std::size_t>(outcome.size()); }
  std::size_t num_covariates() const noexcept { return static_cast<std::size_t>(covariates.cols()); }

  /// Throws DimensionMismatch / InvalidArgument / NonPositiveFollowup.
  void validate() const;

  /// True when every follow-up time equals 1 exactly.
  bool unit_followup() const noexcept;

  std::size_t arm_count(int z) const noexcept;
  double arm_followup_total(int z) const noexcept;
};

}  // namespace stdmarg
