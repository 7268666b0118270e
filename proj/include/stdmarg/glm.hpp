#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "stdmarg/dataset.hpp"

namespace stdmarg {

enum class Family { Gaussian, Binomial, Poisson, NegBin2 };
enum class Link { Identity, Logit, Log };
enum class OffsetRule { None, LogFollowup };

std::string_view to_string(Family family) noexcept;
std::string_view to_string(Link link) noexcept;
std::string_view to_string(OffsetRule rule) noexcept;
Family parse_family(std::string_view name);
Link parse_link(std::string_view name);
OffsetRule parse_offset_rule(std::string_view name);

/// The link each family is fitted with.
Link canonical_link(Family family) noexcept;

/// Outcome model: family, link and the terms of the linear predictor.
///
/// Design-matrix columns are always laid out as
///   [intercept, covariates (p), arm indicators 1..k-1, interactions]
/// where the interaction block runs arm-major: for arm a = 1..k-1, for
/// covariate j = 0..p-1 the column x_j * 1(Z = a). Arm 0 is the reference.
struct ModelSpec {
  Family family = Family::Gaussian;
  Link link = Link::Identity;
  bool interactions = false;
  OffsetRule offset = OffsetRule::None;

  static ModelSpec canonical(Family family, OffsetRule offset = OffsetRule::None,
                             bool interactions = false);

  /// Throws InvalidArgument for unsupported family/link/offset combinations.
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct DesignLayout {
  int num_covariates = 0;
  int num_arms = 2;
  bool interactions = false;

  int num_columns() const noexcept {
    return 1 + num_covariates + (num_arms - 1) * (interactions ? num_covariates + 1 : 1);
  }
  int arm_column(int z) const noexcept { return 1 + num_covariates + (z - 1); }

  /// Writes the design row for covariates `x` under arm `z` into `out`.
  void fill_row(std::span<const double> x, int z, std::span<double> out) const;
  Eigen::VectorXd row(const Eigen::Ref<const Eigen::VectorXd>& x, int z) const;

  std::vector<std::string> column_names(const std::vector<std::string>& covariate_names,
                                        const std::vector<std::string>& arm_labels) const;
};

/// Builds the n x q design matrix using each row's own arm.
Eigen::MatrixXd design_matrix(const TrialDataset& data, const DesignLayout& layout);

/// Builds the design matrix with every row's arm forced to `z`.
Eigen::MatrixXd counterfactual_design(const TrialDataset& data, const DesignLayout& layout, int z);

struct SolverOptions {
  double score_tolerance = 1e-8;
  double loglik_tolerance = 1e-10;
  int max_iterations = 100;
  double min_dispersion = 1e-8;
  double max_dispersion = 1e8;
};

/// Fitted outcome model. Immutable after `fit` returns.
///
/// The parameter vector is theta = (beta, alpha) for negbin2 and theta = beta
/// otherwise. `scores` holds per-row estimating-function contributions at
/// theta-hat, `bread` is n^-1 sum of their derivatives.
struct FitResult {
  ModelSpec spec;
  DesignLayout layout;
  Eigen::VectorXd beta;
  std::optional<double> dispersion;
  bool effectively_poisson = false;
  double residual_scale = 1.0;  // sigma^2 for gaussian, 1 otherwise
  double loglik = 0.0;
  Eigen::MatrixXd scores;
  Eigen::MatrixXd bread;
  Eigen::MatrixXd vcov_model;
  Eigen::MatrixXd vcov_sandwich;
  bool converged = false;
  int iterations = 0;
  std::size_t n = 0;

  int theta_dim() const noexcept {
    return static_cast<int>(beta.size()) + (dispersion ? 1 : 0);
  }
};

FitResult fit(const TrialDataset& data, const ModelSpec& spec, const SolverOptions& options = {});

double inverse_link(Link link, double eta) noexcept;
/// d h / d eta.
double inverse_link_derivative(Link link, double eta) noexcept;

double linear_predictor(const FitResult& fit, const Eigen::Ref<const Eigen::VectorXd>& x, int z);

/// Expected outcome for covariates `x` under arm `z`; scaled by `t` when the
/// model carries a log follow-up offset.
double predict_mean(const FitResult& fit, const Eigen::Ref<const Eigen::VectorXd>& x, int z,
                    double t = 1.0);

/// h(X_i, z, beta-hat) for every row at unit follow-up.
Eigen::VectorXd counterfactual_predictions(const FitResult& fit, const TrialDataset& data, int z);

const Eigen::MatrixXd& score_contributions(const FitResult& fit);
const Eigen::MatrixXd& bread_matrix(const FitResult& fit);

/// M^-1 (n^-1 sum m_i m_i^T) M^-T / n, recomputed from scores and bread.
Eigen::MatrixXd sandwich_vcov(const FitResult& fit);
Eigen::MatrixXd sandwich_vcov(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& bread);

/// Inverse of the bread; throws SingularBread when rcond < 1e-12.
Eigen::MatrixXd checked_inverse(const Eigen::MatrixXd& bread);

}  // namespace stdmarg
