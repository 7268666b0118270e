#include "stdmarg/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "stdmarg/errors.hpp"

namespace stdmarg {

std::string_view to_string(Family family) noexcept {
  switch (family) {
    case Family::Gaussian: return "gaussian";
    case Family::Binomial: return "binomial";
    case Family::Poisson: return "poisson";
    case Family::NegBin2: return "negbin2";
  }
  return "?";
}

std::string_view to_string(Link link) noexcept {
  switch (link) {
    case Link::Identity: return "identity";
    case Link::Logit: return "logit";
    case Link::Log: return "log";
  }
  return "?";
}

std::string_view to_string(OffsetRule rule) noexcept {
  return rule == OffsetRule::LogFollowup ? "log_followup" : "none";
}

Family parse_family(std::string_view name) {
  if (name == "gaussian") return Family::Gaussian;
  if (name == "binomial") return Family::Binomial;
  if (name == "poisson") return Family::Poisson;
  if (name == "negbin2" || name == "negbin") return Family::NegBin2;
  throw Error(ErrorKind::InvalidConfig, "unknown family '" + std::string(name) + "'");
}

Link parse_link(std::string_view name) {
  if (name == "identity") return Link::Identity;
  if (name == "logit") return Link::Logit;
  if (name == "log") return Link::Log;
  throw Error(ErrorKind::InvalidConfig, "unknown link '" + std::string(name) + "'");
}

OffsetRule parse_offset_rule(std::string_view name) {
  if (name == "none") return OffsetRule::None;
  if (name == "log_followup") return OffsetRule::LogFollowup;
  throw Error(ErrorKind::InvalidConfig, "unknown offset rule '" + std::string(name) + "'");
}

Link canonical_link(Family family) noexcept {
  switch (family) {
    case Family::Gaussian: return Link::Identity;
    case Family::Binomial: return Link::Logit;
    case Family::Poisson:
    case Family::NegBin2: return Link::Log;
  }
  return Link::Identity;
}

ModelSpec ModelSpec::canonical(Family family, OffsetRule offset, bool interactions) {
  ModelSpec spec;
  spec.family = family;
  spec.link = canonical_link(family);
  spec.offset = offset;
  spec.interactions = interactions;
  return spec;
}

void ModelSpec::validate() const {
  if (link != canonical_link(family)) {
    throw Error(ErrorKind::InvalidArgument,
                std::string(to_string(family)) + " requires the " +
                    std::string(to_string(canonical_link(family))) + " link");
  }
  if (offset == OffsetRule::LogFollowup && link != Link::Log) {
    throw Error(ErrorKind::InvalidArgument, "log_followup offset requires the log link");
  }
}

void DesignLayout::fill_row(std::span<const double> x, int z, std::span<double> out) const {
  const auto p = static_cast<std::size_t>(num_covariates);
  std::fill(out.begin(), out.end(), 0.0);
  out[0] = 1.0;
  for (std::size_t j = 0; j < p; ++j) out[1 + j] = x[j];
  if (z > 0) {
    out[static_cast<std::size_t>(arm_column(z))] = 1.0;
    if (interactions) {
      const std::size_t base = 1 + p + static_cast<std::size_t>(num_arms - 1) +
                               static_cast<std::size_t>(z - 1) * p;
      for (std::size_t j = 0; j < p; ++j) out[base + j] = x[j];
    }
  }
}

Eigen::VectorXd DesignLayout::row(const Eigen::Ref<const Eigen::VectorXd>& x, int z) const {
  if (x.size() != num_covariates) {
    throw Error(ErrorKind::DimensionMismatch, "covariate vector has length " +
                                                  std::to_string(x.size()) + ", expected " +
                                                  std::to_string(num_covariates));
  }
  if (z < 0 || z >= num_arms) {
    throw Error(ErrorKind::InvalidArgument, "arm " + std::to_string(z) + " out of range");
  }
  Eigen::VectorXd out(num_columns());
  fill_row(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), z,
           std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
  return out;
}

std::vector<std::string> DesignLayout::column_names(
    const std::vector<std::string>& covariate_names,
    const std::vector<std::string>& arm_labels) const {
  auto cov = [&](int j) {
    return j < static_cast<int>(covariate_names.size()) ? covariate_names[static_cast<std::size_t>(j)]
                                                        : "x" + std::to_string(j + 1);
  };
  auto arm = [&](int a) {
    return a < static_cast<int>(arm_labels.size()) ? arm_labels[static_cast<std::size_t>(a)]
                                                   : std::to_string(a);
  };
  std::vector<std::string> names{"(Intercept)"};
  for (int j = 0; j < num_covariates; ++j) names.push_back(cov(j));
  for (int a = 1; a < num_arms; ++a) names.push_back("arm[" + arm(a) + "]");
  if (interactions) {
    for (int a = 1; a < num_arms; ++a) {
      for (int j = 0; j < num_covariates; ++j) names.push_back(cov(j) + ":arm[" + arm(a) + "]");
    }
  }
  return names;
}

namespace {

Eigen::MatrixXd build_design(const TrialDataset& data, const DesignLayout& layout, int forced_arm) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const int q = layout.num_columns();
  // Row-major scratch keeps fill_row contiguous.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> design(n, q);
  Eigen::VectorXd x(layout.num_covariates);
  for (Eigen::Index i = 0; i < n; ++i) {
    x = data.covariates.row(i).transpose();
    const int z = forced_arm >= 0 ? forced_arm : data.arm[static_cast<std::size_t>(i)];
    layout.fill_row(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), z,
                    std::span<double>(design.row(i).data(), static_cast<std::size_t>(q)));
  }
  return design;
}

}  // namespace

Eigen::MatrixXd design_matrix(const TrialDataset& data, const DesignLayout& layout) {
  return build_design(data, layout, -1);
}

Eigen::MatrixXd counterfactual_design(const TrialDataset& data, const DesignLayout& layout, int z) {
  if (z < 0 || z >= layout.num_arms) {
    throw Error(ErrorKind::InvalidArgument, "arm " + std::to_string(z) + " out of range");
  }
  return build_design(data, layout, z);
}

double inverse_link(Link link, double eta) noexcept {
  switch (link) {
    case Link::Identity: return eta;
    case Link::Logit: return 1.0 / (1.0 + std::exp(-eta));
    case Link::Log: return std::exp(eta);
  }
  return eta;
}

double inverse_link_derivative(Link link, double eta) noexcept {
  switch (link) {
    case Link::Identity: return 1.0;
    case Link::Logit: {
      const double p = 1.0 / (1.0 + std::exp(-eta));
      return p * (1.0 - p);
    }
    case Link::Log: return std::exp(eta);
  }
  return 1.0;
}

namespace {

double link_function(Link link, double mu) {
  switch (link) {
    case Link::Identity: return mu;
    case Link::Logit: return std::log(mu / (1.0 - mu));
    case Link::Log: return std::log(mu);
  }
  return mu;
}

bool is_integral(double y) { return y == std::floor(y); }

// Differences of digamma and trigamma at (y + r) and r.
// Integral y takes the exact finite-sum route, which stays accurate for large r.
constexpr double kDirectSumLimit = 200.0;

double digamma_diff(double y, double r) {
  if (is_integral(y) && y <= kDirectSumLimit) {
    double s = 0.0;
    for (int j = 0; j < static_cast<int>(y); ++j) s += 1.0 / (r + j);
    return s;
  }
  return boost::math::digamma(y + r) - boost::math::digamma(r);
}

// sum_{j<y} 1/(r+j)^2 = trigamma(r) - trigamma(y + r)
double trigamma_diff(double y, double r) {
  if (is_integral(y) && y <= kDirectSumLimit) {
    double s = 0.0;
    for (int j = 0; j < static_cast<int>(y); ++j) s += 1.0 / ((r + j) * (r + j));
    return s;
  }
  return boost::math::trigamma(r) - boost::math::trigamma(y + r);
}

struct NbAlphaTerms {
  double loglik = 0.0;
  double d1 = 0.0;  // sum dl/dalpha
  double d2 = 0.0;  // sum d2l/dalpha2
};

// Per-row NB2 alpha derivatives with mu fixed.
double nb_row_alpha_score(double y, double mu, double alpha) {
  const double r = 1.0 / alpha;
  const double l = std::log1p(alpha * mu);
  return (l - digamma_diff(y, r)) / (alpha * alpha) + (y - mu) / (alpha * (1.0 + alpha * mu));
}

double nb_row_alpha_hessian(double y, double mu, double alpha) {
  const double r = 1.0 / alpha;
  const double a2 = alpha * alpha;
  const double l = std::log1p(alpha * mu);
  const double s1 = digamma_diff(y, r);
  const double d2 = trigamma_diff(y, r);
  const double denom = alpha * (1.0 + alpha * mu);
  return -2.0 * (l - s1) / (a2 * alpha) + mu / (a2 * (1.0 + alpha * mu)) - d2 / (a2 * a2) -
         (y - mu) * (1.0 + 2.0 * alpha * mu) / (denom * denom);
}

// The gamma-function terms of the NB2 likelihood depend on the data only
// through the counts. tail_[j] = #{i : y_i > j} turns the per-row finite sums
// into one pass over j < max(y).
class CountTable {
 public:
  explicit CountTable(const Eigen::VectorXd& y) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      log_factorial_ += std::lgamma(y[i] + 1.0);
      if (is_integral(y[i]) && y[i] <= kTableLimit) {
        const auto count = static_cast<std::size_t>(y[i]);
        if (count > tail_.size()) tail_.resize(count, 0.0);
        for (std::size_t j = 0; j < count; ++j) tail_[j] += 1.0;
      } else {
        irregular_.push_back(y[i]);
      }
    }
  }

  /// sum_i [lgamma(y_i + r) - lgamma(r)] and its first two derivatives in r.
  void sums(double r, double& lg, double& dg, double& tg) const {
    lg = dg = tg = 0.0;
    for (std::size_t j = 0; j < tail_.size(); ++j) {
      const double inv = 1.0 / (r + static_cast<double>(j));
      lg += tail_[j] * std::log(r + static_cast<double>(j));
      dg += tail_[j] * inv;
      tg += tail_[j] * inv * inv;
    }
    for (double y : irregular_) {
      lg += std::lgamma(y + r) - std::lgamma(r);
      dg += boost::math::digamma(y + r) - boost::math::digamma(r);
      tg += boost::math::trigamma(r) - boost::math::trigamma(y + r);
    }
  }

  double log_factorial() const noexcept { return log_factorial_; }

 private:
  static constexpr double kTableLimit = 1e6;
  std::vector<double> tail_;
  std::vector<double> irregular_;
  double log_factorial_ = 0.0;
};

NbAlphaTerms nb_alpha_terms(const CountTable& table, const Eigen::VectorXd& y, const Eigen::VectorXd& eta,
                            const Eigen::VectorXd& mu, double alpha) {
  const double r = 1.0 / alpha;
  const double a2 = alpha * alpha;
  const double log_alpha = std::log(alpha);
  double lg = 0.0, s1 = 0.0, s2 = 0.0;
  table.sums(r, lg, s1, s2);
  NbAlphaTerms out;
  out.loglik = lg - table.log_factorial();
  out.d1 = -s1 / a2;
  out.d2 = 2.0 * s1 / (a2 * alpha) - s2 / (a2 * a2);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double l = std::log1p(alpha * mu[i]);
    const double denom = alpha * (1.0 + alpha * mu[i]);
    out.loglik += y[i] * (log_alpha + eta[i]) - (y[i] + r) * l;
    out.d1 += l / a2 + (y[i] - mu[i]) / denom;
    out.d2 += -2.0 * l / (a2 * alpha) + mu[i] / (a2 * (1.0 + alpha * mu[i])) -
              (y[i] - mu[i]) * (1.0 + 2.0 * alpha * mu[i]) / (denom * denom);
  }
  return out;
}

// Working quantities for one row: score contribution (y - mu) * score_weight * x
// and expected information weight.
struct RowWeights {
  double score_weight;
  double info_weight;
};

RowWeights row_weights(Family family, double mu, double alpha) {
  switch (family) {
    case Family::Gaussian: return {1.0, 1.0};
    case Family::Binomial: return {1.0, mu * (1.0 - mu)};
    case Family::Poisson: return {1.0, mu};
    case Family::NegBin2: return {1.0 / (1.0 + alpha * mu), mu / (1.0 + alpha * mu)};
  }
  return {1.0, 1.0};
}

double row_loglik(Family family, double y, double eta, double mu, double alpha) {
  switch (family) {
    case Family::Gaussian: return -0.5 * (y - mu) * (y - mu);
    case Family::Binomial:
      // y * eta - log(1 + e^eta), computed without overflow
      return y * eta - (eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)));
    case Family::Poisson: return (y > 0 ? y * eta : 0.0) - mu;
    case Family::NegBin2:
      // terms free of beta are added from the count table
      return y * eta - (y + 1.0 / alpha) * std::log1p(alpha * mu);
  }
  return 0.0;
}

void check_family_data(const TrialDataset& data, Family family) {
  for (Eigen::Index i = 0; i < data.outcome.size(); ++i) {
    const double y = data.outcome[i];
    if (!std::isfinite(y)) {
      throw Error(ErrorKind::InvalidFamilyData, "row " + std::to_string(i) + ": non-finite outcome");
    }
    if (family == Family::Binomial && y != 0.0 && y != 1.0) {
      throw Error(ErrorKind::InvalidFamilyData,
                  "row " + std::to_string(i) + ": binomial outcome must be 0 or 1");
    }
    if ((family == Family::Poisson || family == Family::NegBin2) && y < 0.0) {
      throw Error(ErrorKind::InvalidFamilyData,
                  "row " + std::to_string(i) + ": count outcome must be non-negative");
    }
  }
  if (!data.covariates.allFinite()) {
    throw Error(ErrorKind::InvalidFamilyData, "non-finite covariate value");
  }
}

double reciprocal_condition(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s[0] == 0.0) return 0.0;
  return s[s.size() - 1] / s[0];
}

class GlmSolver {
 public:
  GlmSolver(const TrialDataset& data, const ModelSpec& spec, const SolverOptions& options)
      : data_(data), spec_(spec), options_(options) {
    layout_.num_covariates = static_cast<int>(data.num_covariates());
    layout_.num_arms = data.num_arms;
    layout_.interactions = spec.interactions;
    design_ = design_matrix(data, layout_);
    offset_ = Eigen::VectorXd::Zero(design_.rows());
    if (spec.offset == OffsetRule::LogFollowup) offset_ = data.followup.array().log().matrix();
    y_ = data.outcome;
    nb_ = spec.family == Family::NegBin2;
    if (nb_) table_.emplace(y_);
  }

  FitResult run();

 private:
  void update_mean(const Eigen::VectorXd& beta) {
    eta_ = design_ * beta + offset_;
    mu_.resize(eta_.size());
    for (Eigen::Index i = 0; i < eta_.size(); ++i) mu_[i] = inverse_link(spec_.link, eta_[i]);
  }

  double loglik() const {
    if (nb_) return nb_alpha_terms(*table_, y_, eta_, mu_, alpha_).loglik;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y_.size(); ++i) ll += row_loglik(spec_.family, y_[i], eta_[i], mu_[i], alpha_);
    return ll;
  }

  // beta-part score sum and expected information at the current mean.
  void beta_equations(Eigen::VectorXd& score, Eigen::MatrixXd& info, Eigen::VectorXd* resid_weighted = nullptr) const {
    Eigen::VectorXd r(y_.size());
    Eigen::VectorXd w(y_.size());
    for (Eigen::Index i = 0; i < y_.size(); ++i) {
      const auto rw = row_weights(spec_.family, mu_[i], alpha_);
      r[i] = (y_[i] - mu_[i]) * rw.score_weight;
      w[i] = rw.info_weight;
    }
    score = design_.transpose() * r;
    info = design_.transpose() * w.asDiagonal() * design_;
    if (resid_weighted) *resid_weighted = r;
  }

  void check_rank() const {
    const auto n = design_.rows();
    const auto q = design_.cols();
    if (n < q) {
      throw Error(ErrorKind::RankDeficientDesign,
                  std::to_string(n) + " rows cannot identify " + std::to_string(q) + " coefficients");
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design_);
    qr.setThreshold(1e-10);
    if (qr.rank() < q) {
      throw Error(ErrorKind::RankDeficientDesign,
                  "design matrix has rank " + std::to_string(qr.rank()) + " < " + std::to_string(q) +
                      " columns");
    }
  }

  Eigen::VectorXd initial_beta() const {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(design_.cols());
    const double exposure = spec_.offset == OffsetRule::LogFollowup ? data_.followup.sum()
                                                                    : static_cast<double>(y_.size());
    double mean = y_.sum() / exposure;
    constexpr double kEdge = 1e-6;
    if (spec_.link == Link::Logit) mean = std::clamp(mean, kEdge, 1.0 - kEdge);
    if (spec_.link == Link::Log) mean = std::max(mean, kEdge);
    beta[0] = link_function(spec_.link, mean);
    return beta;
  }

  double initial_alpha() const {
    const bool use_t = spec_.offset == OffsetRule::LogFollowup;
    const double exposure = use_t ? data_.followup.sum() : static_cast<double>(y_.size());
    const double rate = y_.sum() / exposure;
    double num = 0.0;
    double den = 0.0;
    for (Eigen::Index i = 0; i < y_.size(); ++i) {
      const double m = rate * (use_t ? data_.followup[i] : 1.0);
      num += (y_[i] - m) * (y_[i] - m) - m;
      den += m * m;
    }
    const double alpha = den > 0 ? num / den : 0.0;
    return std::clamp(std::max(alpha, 0.01), options_.min_dispersion, options_.max_dispersion);
  }

  // Newton on log(alpha) for the profile likelihood at the current mean.
  void update_alpha() {
    const double lo = std::log(options_.min_dispersion);
    const double hi = std::log(options_.max_dispersion);
    double lam = std::log(alpha_);
    auto terms = nb_alpha_terms(*table_, y_, eta_, mu_, alpha_);
    for (int it = 0; it < 100; ++it) {
      const double g = alpha_ * terms.d1;
      const double h = alpha_ * alpha_ * terms.d2 + g;
      double step = h < 0 ? -g / h : (g > 0 ? 1.0 : -1.0);
      step = std::clamp(step, -3.0, 3.0);
      if ((lam <= lo && step < 0) || (lam >= hi && step > 0)) break;
      double accepted = lam;
      NbAlphaTerms next;
      for (int half = 0; half < 40; ++half) {
        const double cand = std::clamp(lam + step, lo, hi);
        next = nb_alpha_terms(*table_, y_, eta_, mu_, std::exp(cand));
        if (next.loglik >= terms.loglik - 1e-12 * std::abs(terms.loglik)) {
          accepted = cand;
          break;
        }
        step *= 0.5;
      }
      const double moved = std::abs(accepted - lam);
      if (accepted == lam) break;
      lam = accepted;
      alpha_ = std::exp(lam);
      terms = next;
      if (moved < 1e-12) break;
    }
    alpha_ = std::exp(lam);
  }

  double score_scale() const { return std::max(1.0, y_.cwiseAbs().mean()); }

  const TrialDataset& data_;
  ModelSpec spec_;
  SolverOptions options_;
  DesignLayout layout_;
  Eigen::MatrixXd design_;
  Eigen::VectorXd offset_;
  Eigen::VectorXd y_;
  Eigen::VectorXd eta_;
  Eigen::VectorXd mu_;
  double alpha_ = 0.0;
  bool nb_ = false;
  std::optional<CountTable> table_;
};

FitResult GlmSolver::run() {
  check_rank();
  const auto n = y_.size();
  const auto q = design_.cols();

  Eigen::VectorXd beta = initial_beta();
  if (nb_) alpha_ = initial_alpha();
  update_mean(beta);
  double ll = loglik();

  bool converged = false;
  int iter = 0;
  Eigen::VectorXd score;
  Eigen::MatrixXd info;
  const double tol = options_.score_tolerance * score_scale();

  for (iter = 1; iter <= options_.max_iterations; ++iter) {
    beta_equations(score, info);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    Eigen::VectorXd delta;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      delta = ldlt.solve(score);
    } else {
      delta = info.colPivHouseholderQr().solve(score);
    }
    if (!delta.allFinite()) break;

    double step = 1.0;
    Eigen::VectorXd candidate = beta + delta;
    for (int half = 0; half < 40; ++half) {
      candidate = beta + step * delta;
      update_mean(candidate);
      const double ll_try = loglik();
      if (std::isfinite(ll_try) && ll_try >= ll - 1e-12 * std::abs(ll)) break;
      step *= 0.5;
    }
    const double step_size = (candidate - beta).cwiseAbs().maxCoeff();
    const double beta_size = 1.0 + beta.cwiseAbs().maxCoeff();
    beta = candidate;
    update_mean(beta);
    if (nb_) update_alpha();

    const double ll_new = loglik();
    beta_equations(score, info);
    double max_score = (score / static_cast<double>(n)).cwiseAbs().maxCoeff();
    if (nb_) {
      const bool at_floor = alpha_ <= options_.min_dispersion * (1.0 + 1e-12);
      const auto at = nb_alpha_terms(*table_, y_, eta_, mu_, alpha_);
      const double alpha_score = alpha_ * at.d1 / static_cast<double>(n);
      if (!(at_floor && alpha_score < 0)) max_score = std::max(max_score, std::abs(alpha_score));
    }
    const double change = std::abs(ll_new - ll);
    const bool small_change = change <= options_.loglik_tolerance * std::abs(ll_new) || change == 0.0;
    const bool small_step = step_size <= 1e-12 * beta_size;
    ll = ll_new;
    if (max_score <= tol && (small_change || small_step)) {
      converged = true;
      break;
    }
  }

  if (spec_.family == Family::Binomial) {
    const double max_lp = (eta_ - offset_).cwiseAbs().maxCoeff();
    if (max_lp > 30.0) {
      throw Error(ErrorKind::SeparationDetected,
                  "fitted probabilities pinned at 0/1 (|linear predictor| = " + std::to_string(max_lp) + ")");
    }
  }
  if (!converged) {
    throw Error(ErrorKind::NonConvergence,
                "no convergence after " + std::to_string(options_.max_iterations) + " iterations");
  }

  FitResult out;
  out.spec = spec_;
  out.layout = layout_;
  out.beta = beta;
  out.loglik = ll;
  out.converged = true;
  out.iterations = iter;
  out.n = static_cast<std::size_t>(n);

  const int d = static_cast<int>(q) + (nb_ ? 1 : 0);
  Eigen::VectorXd resid;
  beta_equations(score, info, &resid);
  out.scores.resize(n, d);
  out.scores.leftCols(q) = resid.asDiagonal() * design_;
  out.bread = Eigen::MatrixXd::Zero(d, d);
  out.bread.topLeftCorner(q, q) = -info / static_cast<double>(n);
  out.vcov_model = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd info_inv = checked_inverse(info / static_cast<double>(n)) / static_cast<double>(n);

  if (spec_.family == Family::Gaussian) {
    const double rss = (y_ - mu_).squaredNorm();
    out.residual_scale = n > q ? rss / static_cast<double>(n - q) : rss / static_cast<double>(n);
    info_inv *= out.residual_scale;
  }
  out.vcov_model.topLeftCorner(q, q) = info_inv;

  if (nb_) {
    out.dispersion = alpha_;
    out.effectively_poisson = alpha_ <= options_.min_dispersion * (1.0 + 1e-12);
    double hess = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      out.scores(i, q) = nb_row_alpha_score(y_[i], mu_[i], alpha_);
      hess += nb_row_alpha_hessian(y_[i], mu_[i], alpha_);
    }
    out.bread(q, q) = hess / static_cast<double>(n);
    out.vcov_model(q, q) = -1.0 / hess;
  }

  out.vcov_model = 0.5 * (out.vcov_model + out.vcov_model.transpose());
  out.vcov_sandwich = sandwich_vcov(out.scores, out.bread);
  return out;
}

}  // namespace

FitResult fit(const TrialDataset& data, const ModelSpec& spec, const SolverOptions& options) {
  spec.validate();
  data.validate();
  if (data.size() == 0) throw Error(ErrorKind::InvalidArgument, "empty dataset");
  check_family_data(data, spec.family);
  GlmSolver solver(data, spec, options);
  return solver.run();
}

double linear_predictor(const FitResult& fit, const Eigen::Ref<const Eigen::VectorXd>& x, int z) {
  return fit.layout.row(x, z).dot(fit.beta);
}

double predict_mean(const FitResult& fit, const Eigen::Ref<const Eigen::VectorXd>& x, int z, double t) {
  const double h = inverse_link(fit.spec.link, linear_predictor(fit, x, z));
  return fit.spec.offset == OffsetRule::LogFollowup ? t * h : h;
}

Eigen::VectorXd counterfactual_predictions(const FitResult& fit, const TrialDataset& data, int z) {
  if (static_cast<int>(data.num_covariates()) != fit.layout.num_covariates ||
      data.num_arms != fit.layout.num_arms) {
    throw Error(ErrorKind::DimensionMismatch, "dataset does not match the fitted design");
  }
  const Eigen::VectorXd lp = counterfactual_design(data, fit.layout, z) * fit.beta;
  Eigen::VectorXd h(lp.size());
  for (Eigen::Index i = 0; i < lp.size(); ++i) h[i] = inverse_link(fit.spec.link, lp[i]);
  return h;
}

const Eigen::MatrixXd& score_contributions(const FitResult& fit) {
  if (!fit.converged) throw Error(ErrorKind::NotConverged, "fit did not converge");
  return fit.scores;
}

const Eigen::MatrixXd& bread_matrix(const FitResult& fit) {
  if (!fit.converged) throw Error(ErrorKind::NotConverged, "fit did not converge");
  return fit.bread;
}

Eigen::MatrixXd checked_inverse(const Eigen::MatrixXd& bread) {
  const double rcond = reciprocal_condition(bread);
  if (!(rcond >= 1e-12)) {
    throw Error(ErrorKind::SingularBread, "reciprocal condition number " + std::to_string(rcond));
  }
  return bread.fullPivLu().inverse();
}

Eigen::MatrixXd sandwich_vcov(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& bread) {
  const double n = static_cast<double>(scores.rows());
  const Eigen::MatrixXd bread_inv = checked_inverse(bread);
  const Eigen::MatrixXd meat = scores.transpose() * scores / n;
  Eigen::MatrixXd v = bread_inv * meat * bread_inv.transpose() / n;
  return 0.5 * (v + v.transpose());
}

Eigen::MatrixXd sandwich_vcov(const FitResult& fit) {
  return sandwich_vcov(score_contributions(fit), bread_matrix(fit));
}

}  // namespace stdmarg
