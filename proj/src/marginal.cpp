#include "stdmarg/marginal.hpp"

#include <cmath>
#include <string>

#include <boost/math/distributions/normal.hpp>

#include "stdmarg/errors.hpp"

namespace stdmarg {

std::string_view to_string(Estimator e) noexcept {
  switch (e) {
    case Estimator::Mu1: return "mu1";
    case Estimator::Mu2: return "mu2";
    case Estimator::Mu3: return "mu3";
  }
  return "?";
}

std::string_view to_string(VarianceKind v) noexcept {
  switch (v) {
    case VarianceKind::IidSandwich: return "iid_sandwich";
    case VarianceKind::FixedX: return "fixed_x";
    case VarianceKind::RandomX: return "random_x";
    case VarianceKind::FullInfluence: return "full_influence";
    case VarianceKind::Augmented: return "augmented";
  }
  return "?";
}

std::string_view to_string(VcovSource v) noexcept {
  return v == VcovSource::Model ? "model" : "sandwich";
}

std::string_view to_string(CiScale s) noexcept {
  return s == CiScale::Log ? "log" : "identity";
}

Estimator parse_estimator(std::string_view name) {
  if (name == "mu1") return Estimator::Mu1;
  if (name == "mu2") return Estimator::Mu2;
  if (name == "mu3") return Estimator::Mu3;
  throw Error(ErrorKind::InvalidConfig, "unknown estimator '" + std::string(name) + "'");
}

VarianceKind parse_variance_kind(std::string_view name) {
  if (name == "iid_sandwich") return VarianceKind::IidSandwich;
  if (name == "fixed_x") return VarianceKind::FixedX;
  if (name == "random_x") return VarianceKind::RandomX;
  if (name == "full_influence") return VarianceKind::FullInfluence;
  if (name == "augmented") return VarianceKind::Augmented;
  throw Error(ErrorKind::InvalidConfig, "unknown variance method '" + std::string(name) + "'");
}

VcovSource parse_vcov_source(std::string_view name) {
  if (name == "model") return VcovSource::Model;
  if (name == "sandwich") return VcovSource::Sandwich;
  throw Error(ErrorKind::InvalidConfig, "unknown vcov source '" + std::string(name) + "'");
}

CiScale parse_ci_scale(std::string_view name) {
  if (name == "identity") return CiScale::Identity;
  if (name == "log") return CiScale::Log;
  throw Error(ErrorKind::InvalidConfig, "unknown ci scale '" + std::string(name) + "'");
}

CiScale default_ci_scale(Family family) noexcept {
  return (family == Family::Poisson || family == Family::NegBin2) ? CiScale::Log
                                                                  : CiScale::Identity;
}

double MarginalEstimate::se() const { return std::sqrt(variance); }

double critical_value(double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "confidence level must lie in (0, 1)");
  }
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, 0.5 + 0.5 * level);
}

std::pair<double, double> confidence_interval(double estimate, double variance, CiScale scale,
                                              double level) {
  const double half = critical_value(level) * std::sqrt(std::max(variance, 0.0));
  if (scale == CiScale::Identity) return {estimate - half, estimate + half};
  if (!(estimate > 0.0)) {
    throw Error(ErrorKind::NonPositiveEstimateForLogScale,
                "estimate " + std::to_string(estimate) + " cannot be put on the log scale");
  }
  const double log_half = half / estimate;
  return {std::exp(std::log(estimate) - log_half), std::exp(std::log(estimate) + log_half)};
}

namespace {

void require_arm(const TrialDataset& data, int z) {
  if (z < 0 || z >= data.num_arms) {
    throw Error(ErrorKind::EmptyArm, "arm " + std::to_string(z) + " is not in the dataset");
  }
  if (data.arm_count(z) == 0) {
    throw Error(ErrorKind::EmptyArm, "no rows randomised to arm " + std::to_string(z));
  }
}

void require_fit_matches(const TrialDataset& data, const FitResult& fit) {
  if (!fit.converged) throw Error(ErrorKind::NotConverged, "fit did not converge");
  if (fit.n != data.size() ||
      static_cast<int>(data.num_covariates()) != fit.layout.num_covariates ||
      data.num_arms != fit.layout.num_arms) {
    throw Error(ErrorKind::DimensionMismatch, "fit was not produced from this dataset");
  }
}

MarginalEstimate finish(MarginalEstimate est, const EstimateOptions& options) {
  est.variance = std::max(est.variance, 0.0);
  est.ci_scale = options.ci_scale;
  est.ci_level = options.ci_level;
  const auto [lo, hi] = confidence_interval(est.estimate, est.variance, options.ci_scale, options.ci_level);
  est.ci_low = lo;
  est.ci_high = hi;
  return est;
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

MarginalEstimate mu1(const TrialDataset& data, int z, const EstimateOptions& options) {
  require_arm(data, z);
  const auto n_z = static_cast<double>(data.arm_count(z));
  double y_sum = 0.0;
  double t_sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.arm[i] != z) continue;
    const auto ii = static_cast<Eigen::Index>(i);
    y_sum += data.outcome[ii];
    t_sum += data.followup[ii];
  }
  const double rate = y_sum / t_sum;
  const double tau = t_sum / n_z;

  double ss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.arm[i] != z) continue;
    const auto ii = static_cast<Eigen::Index>(i);
    const double expected = options.printed_variance ? rate : rate * data.followup[ii];
    const double r = data.outcome[ii] - expected;
    ss += r * r;
  }

  MarginalEstimate est;
  est.arm = z;
  est.estimator = Estimator::Mu1;
  est.estimate = rate;
  est.variance = ss / (tau * tau * n_z * n_z);
  est.method = {VarianceKind::IidSandwich, VcovSource::Sandwich};
  est.n_used = static_cast<std::size_t>(n_z);
  return finish(est, options);
}

Eigen::VectorXd gbeta(const TrialDataset& data, const FitResult& fit, int z) {
  if (static_cast<int>(data.num_covariates()) != fit.layout.num_covariates ||
      data.num_arms != fit.layout.num_arms) {
    throw Error(ErrorKind::DimensionMismatch, "dataset does not match the fitted design");
  }
  const Eigen::MatrixXd design = counterfactual_design(data, fit.layout, z);
  const Eigen::VectorXd lp = design * fit.beta;
  Eigen::VectorXd slope(lp.size());
  for (Eigen::Index i = 0; i < lp.size(); ++i) slope[i] = inverse_link_derivative(fit.spec.link, lp[i]);
  return design.transpose() * slope / static_cast<double>(lp.size());
}

double random_x_adjustment(std::span<const double> predictions) {
  const double m = mean(predictions);
  double ss = 0.0;
  for (double h : predictions) ss += (h - m) * (h - m);
  const double n = static_cast<double>(predictions.size());
  return ss / (n * n);
}

MarginalEstimate mu2(const TrialDataset& data, const FitResult& fit, int z,
                     const VarianceMethod& method, const EstimateOptions& options) {
  require_fit_matches(data, fit);
  if (z < 0 || z >= data.num_arms) {
    throw Error(ErrorKind::EmptyArm, "arm " + std::to_string(z) + " is not in the dataset");
  }
  const Eigen::VectorXd h = counterfactual_predictions(fit, data, z);
  const std::span<const double> hs(h.data(), static_cast<std::size_t>(h.size()));
  const double estimate = mean(hs);
  const Eigen::VectorXd g = gbeta(data, fit, z);
  const auto q = fit.beta.size();

  double variance = 0.0;
  switch (method.kind) {
    case VarianceKind::FixedX:
    case VarianceKind::RandomX: {
      const Eigen::MatrixXd& vcov = method.vcov == VcovSource::Sandwich ? fit.vcov_sandwich : fit.vcov_model;
      variance = g.dot(vcov.topLeftCorner(q, q) * g);
      if (method.kind == VarianceKind::RandomX) variance += random_x_adjustment(hs);
      break;
    }
    case VarianceKind::FullInfluence: {
      const Eigen::MatrixXd bread_inv = checked_inverse(bread_matrix(fit));
      Eigen::VectorXd g_theta = Eigen::VectorXd::Zero(fit.theta_dim());
      g_theta.head(q) = g;
      // G_theta psi_i = -G_theta M^-1 m_i for every row at once.
      const Eigen::VectorXd row_weights = -(bread_inv.transpose() * g_theta);
      const Eigen::VectorXd correction = score_contributions(fit) * row_weights;
      const double n = static_cast<double>(h.size());
      double ss = 0.0;
      for (Eigen::Index i = 0; i < h.size(); ++i) {
        const double term = h[i] - estimate + correction[i];
        ss += term * term;
      }
      variance = ss / (n * n);
      break;
    }
    default:
      throw Error(ErrorKind::InvalidArgument,
                  "mu2 supports fixed_x, random_x or full_influence, not " +
                      std::string(to_string(method.kind)));
  }

  MarginalEstimate est;
  est.arm = z;
  est.estimator = Estimator::Mu2;
  est.estimate = estimate;
  est.variance = variance;
  est.method = method;
  est.n_used = data.size();
  return finish(est, options);
}

MarginalEstimate mu3(const TrialDataset& data, std::span<const double> predictions, int z,
                     const EstimateOptions& options) {
  require_arm(data, z);
  if (predictions.size() != data.size()) {
    throw Error(ErrorKind::DimensionMismatch, "one prediction per row is required");
  }
  const double n = static_cast<double>(data.size());
  const auto n_z = static_cast<double>(data.arm_count(z));
  const double pi = n_z / n;
  const double tau = data.arm_followup_total(z) / n_z;
  const double crude = mu1(data, z, {CiScale::Identity, options.ci_level, options.printed_variance}).estimate;
  const double mu2_hat = mean(predictions);

  double augmentation = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double indicator = data.arm[i] == z ? 1.0 : 0.0;
    augmentation += (indicator - pi) / pi * predictions[i];
  }
  const double estimate = crude - augmentation / n;

  double ss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double indicator = data.arm[i] == z ? 1.0 : 0.0;
    const double expected = options.printed_variance ? estimate : estimate * data.followup[ii];
    const double term = indicator * (data.outcome[ii] - expected) -
                        tau * (indicator - pi) * (predictions[i] - mu2_hat);
    ss += term * term;
  }

  MarginalEstimate est;
  est.arm = z;
  est.estimator = Estimator::Mu3;
  est.estimate = estimate;
  est.variance = ss / (pi * pi * tau * tau * n * n);
  est.method = {VarianceKind::Augmented, VcovSource::Sandwich};
  est.n_used = data.size();
  return finish(est, options);
}

MarginalEstimate mu3(const TrialDataset& data, const FitResult& fit, int z,
                     const EstimateOptions& options) {
  require_fit_matches(data, fit);
  require_arm(data, z);
  const Eigen::VectorXd h = counterfactual_predictions(fit, data, z);
  return mu3(data, std::span<const double>(h.data(), static_cast<std::size_t>(h.size())), z, options);
}

}  // namespace stdmarg
