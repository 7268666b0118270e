#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <utility>

#include <Eigen/Dense>

#include "stdmarg/dataset.hpp"
#include "stdmarg/glm.hpp"

namespace stdmarg {

enum class Estimator { Mu1, Mu2, Mu3 };

enum class VarianceKind { IidSandwich, FixedX, RandomX, FullInfluence, Augmented };

/// Where vcov(beta-hat) comes from inside the fixed_x / random_x delta method.
enum class VcovSource { Model, Sandwich };

enum class CiScale { Identity, Log };

struct VarianceMethod {
  VarianceKind kind = VarianceKind::RandomX;
  VcovSource vcov = VcovSource::Sandwich;

  friend bool operator==(const VarianceMethod&, const VarianceMethod&) = default;
};

std::string_view to_string(Estimator e) noexcept;
std::string_view to_string(VarianceKind v) noexcept;
std::string_view to_string(VcovSource v) noexcept;
std::string_view to_string(CiScale s) noexcept;
Estimator parse_estimator(std::string_view name);
VarianceKind parse_variance_kind(std::string_view name);
VcovSource parse_vcov_source(std::string_view name);
CiScale parse_ci_scale(std::string_view name);

/// Log scale for count families, identity otherwise.
CiScale default_ci_scale(Family family) noexcept;

struct MarginalEstimate {
  int arm = 0;
  Estimator estimator = Estimator::Mu1;
  double estimate = 0.0;
  double variance = 0.0;
  VarianceMethod method;
  double ci_low = 0.0;
  double ci_high = 0.0;
  CiScale ci_scale = CiScale::Identity;
  double ci_level = 0.95;
  std::size_t n_used = 0;

  double se() const;

  friend bool operator==(const MarginalEstimate&, const MarginalEstimate&) = default;
};

struct EstimateOptions {
  CiScale ci_scale = CiScale::Identity;
  double ci_level = 0.95;
  /// Use the residual {Y - mu} in the rate variances instead of {Y - mu T}.
  bool printed_variance = false;
};

/// Two-sided standard-normal critical value for `level` (1.959964 at 0.95).
double critical_value(double level);

/// identity: est +- z SE; log: exp(log est +- z SE / est).
std::pair<double, double> confidence_interval(double estimate, double variance, CiScale scale,
                                              double level = 0.95);

/// Crude arm mean (or rate, with follow-up) and its sandwich variance.
MarginalEstimate mu1(const TrialDataset& data, int z, const EstimateOptions& options = {});

/// n^-1 sum d h(X_i, z, beta) / d beta^T at beta-hat.
Eigen::VectorXd gbeta(const TrialDataset& data, const FitResult& fit, int z);

/// Standardization estimator n^-1 sum h(X_i, z, beta-hat).
/// `method` must be fixed_x, random_x or full_influence.
MarginalEstimate mu2(const TrialDataset& data, const FitResult& fit, int z,
                     const VarianceMethod& method, const EstimateOptions& options = {});

/// n^-2 sum (h_i - mean h)^2, the random-X correction added to fixed_x.
double random_x_adjustment(std::span<const double> predictions);

/// Augmented estimator from working-model predictions h(X_i, z) for every row.
MarginalEstimate mu3(const TrialDataset& data, std::span<const double> predictions, int z,
                     const EstimateOptions& options = {});

MarginalEstimate mu3(const TrialDataset& data, const FitResult& fit, int z,
                     const EstimateOptions& options = {});

}  // namespace stdmarg
