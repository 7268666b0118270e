#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "oracle.hpp"
#include "stdmarg/errors.hpp"
#include "stdmarg/marginal.hpp"

using namespace stdmarg;

namespace {

TrialDataset d4() {
  Eigen::VectorXd y(4);
  y << 1, 3, 2, 6;
  Eigen::MatrixXd x(4, 1);
  x << 0, 1, 0, 1;
  return TrialDataset(y, x, {0, 0, 1, 1}, 2);
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::InvalidArgument;
}

const VarianceMethod kFixed{VarianceKind::FixedX, VcovSource::Sandwich};
const VarianceMethod kRandom{VarianceKind::RandomX, VcovSource::Sandwich};
const VarianceMethod kFull{VarianceKind::FullInfluence, VcovSource::Sandwich};

}  // namespace

TEST_CASE("mu1 on small arms") {
  Eigen::VectorXd y(4);
  y << 2, 4, 1, 3;
  Eigen::VectorXd t(4);
  t << 1, 2, 1, 1;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 0);
  TrialDataset data(y, x, {0, 0, 1, 1}, t, 2);

  const auto rate = mu1(data, 0);
  CHECK(rate.estimate == 2.0);
  CHECK(rate.variance == 0.0);
  CHECK(rate.method.kind == VarianceKind::IidSandwich);

  const auto mean = mu1(data, 1);
  CHECK(mean.estimate == 2.0);
  CHECK(mean.variance == doctest::Approx(0.5));
  CHECK(mean.n_used == 2);

  // printed form drops T from the residual and differs once T varies
  const auto printed = mu1(data, 0, {CiScale::Identity, 0.95, true});
  CHECK(printed.estimate == 2.0);
  CHECK(printed.variance == doctest::Approx((0.0 + 4.0) / (1.5 * 1.5 * 4.0)));
  CHECK(mu1(data, 1, {CiScale::Identity, 0.95, true}).variance == doctest::Approx(0.5));
}

TEST_CASE("empty or unknown arms") {
  Eigen::VectorXd y(3);
  y << 1, 2, 3;
  TrialDataset data(y, Eigen::MatrixXd::Zero(3, 0), {0, 0, 1}, 3);
  CHECK(kind_of([&] { mu1(data, 2); }) == ErrorKind::EmptyArm);
  CHECK(kind_of([&] { mu1(data, 7); }) == ErrorKind::EmptyArm);
  std::vector<double> h(3, 1.0);
  CHECK(kind_of([&] { mu3(data, h, 2); }) == ErrorKind::EmptyArm);
}

TEST_CASE("D4 hand-derived values") {
  const auto data = d4();
  const auto f = fit(data, ModelSpec::canonical(Family::Gaussian));

  const Eigen::VectorXd g = gbeta(data, f, 1);
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == doctest::Approx(0.5));
  CHECK(g[2] == doctest::Approx(1.0));

  const auto fixed = mu2(data, f, 1, kFixed);
  const auto random = mu2(data, f, 1, kRandom);
  CHECK(fixed.estimate == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(fixed.estimate == doctest::Approx(mu1(data, 1).estimate).epsilon(1e-12));
  CHECK(random.variance - fixed.variance == doctest::Approx(0.5625).epsilon(1e-12));
  CHECK(mu2(data, f, 0, kFixed).estimate == doctest::Approx(2.0).epsilon(1e-12));

  CHECK(mu3(data, f, 1).estimate == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(mu3(data, f, 1).method.kind == VarianceKind::Augmented);

  CHECK(kind_of([&] { mu2(data, f, 1, {VarianceKind::Augmented, VcovSource::Sandwich}); }) ==
        ErrorKind::InvalidArgument);
}

TEST_CASE("gbeta with the log link at beta = 0 is the average design row") {
  std::mt19937_64 rng(3);
  const auto data = oracle::random_dataset(rng, Family::Poisson, 30, 2, 2, false);
  FitResult f;
  f.spec = ModelSpec::canonical(Family::Poisson);
  f.layout = {2, 2, false};
  f.beta = Eigen::VectorXd::Zero(4);
  const Eigen::MatrixXd rows = oracle::design(data, false, 1);
  const Eigen::VectorXd expected = rows.colwise().mean().transpose();
  CHECK((gbeta(data, f, 1) - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("saturated model reproduces direct standardisation") {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 80;
    Eigen::VectorXd y(n);
    Eigen::MatrixXd x(n, 1);
    std::vector<int> z(n);
    std::bernoulli_distribution coin(0.4);
    std::normal_distribution<double> noise(0, 1);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = i % 4 < 2 ? 1.0 : 0.0;
      z[static_cast<std::size_t>(i)] = i % 2;
      y[i] = 1.0 + 2.0 * x(i, 0) - z[static_cast<std::size_t>(i)] + noise(rng);
    }
    std::shuffle(z.begin(), z.end(), rng);
    TrialDataset data(y, x, z, 2);
    auto spec = ModelSpec::canonical(Family::Gaussian);
    spec.interactions = true;
    const auto f = fit(data, spec);

    for (int arm = 0; arm < 2; ++arm) {
      // sum over strata s of P(X = s) * mean(Y | X = s, Z = arm)
      std::map<int, double> sum, count, total;
      for (int i = 0; i < n; ++i) {
        const int s = static_cast<int>(x(i, 0));
        total[s] += 1;
        if (z[static_cast<std::size_t>(i)] == arm) {
          sum[s] += y[i];
          count[s] += 1;
        }
      }
      double standardised = 0.0;
      for (auto& [s, m] : total) standardised += m / n * sum[s] / count[s];
      CHECK(mu2(data, f, arm, kRandom).estimate == doctest::Approx(standardised).epsilon(1e-10));
    }
  }
}

TEST_CASE("null working model collapses mu3 to mu1") {
  std::mt19937_64 rng(21);
  for (bool follow : {false, true}) {
    const auto data = oracle::random_dataset(rng, Family::Poisson, 60, 1, 3, follow);
    const std::vector<double> zero(data.size(), 0.0);
    for (int z = 0; z < 3; ++z) {
      const auto a = mu3(data, zero, z);
      const auto b = mu1(data, z);
      CHECK(a.estimate == doctest::Approx(b.estimate).epsilon(1e-14));
      CHECK(a.variance == doctest::Approx(b.variance).epsilon(1e-12));
    }
  }
}

TEST_CASE("canonical fits give mu2 == mu3") {
  std::mt19937_64 rng(77);
  for (auto family : {Family::Gaussian, Family::Binomial, Family::Poisson}) {
    for (int rep = 0; rep < 10; ++rep) {
      const auto data = oracle::random_dataset(rng, family, 90, 2, 3, false);
      const auto f = fit(data, ModelSpec::canonical(family));
      for (int z = 0; z < 3; ++z) {
        CHECK(mu2(data, f, z, kRandom).estimate == doctest::Approx(mu3(data, f, z).estimate).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("random_x never falls below fixed_x") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 10; ++rep) {
    const auto data = oracle::random_dataset(rng, Family::NegBin2, 100, 2, 2, true);
    const auto f = fit(data, ModelSpec::canonical(Family::NegBin2, OffsetRule::LogFollowup));
    for (auto source : {VcovSource::Model, VcovSource::Sandwich}) {
      const auto fixed = mu2(data, f, 1, {VarianceKind::FixedX, source});
      const auto random = mu2(data, f, 1, {VarianceKind::RandomX, source});
      const Eigen::VectorXd h = counterfactual_predictions(f, data, 1);
      const double adj = random_x_adjustment(std::span<const double>(h.data(), h.size()));
      CHECK(adj >= 0.0);
      CHECK(random.variance - fixed.variance == doctest::Approx(adj).epsilon(1e-10));
      CHECK(random.ci_high - random.ci_low >= fixed.ci_high - fixed.ci_low);
    }
  }
}

TEST_CASE("no covariates: mu2 equals mu1 and the random-X term vanishes") {
  std::mt19937_64 rng(4);
  auto data = oracle::random_dataset(rng, Family::Poisson, 50, 0, 2, true);
  for (auto family : {Family::Gaussian, Family::Poisson}) {
    const auto spec = ModelSpec::canonical(family, family == Family::Poisson ? OffsetRule::LogFollowup : OffsetRule::None);
    if (family == Family::Gaussian) data.followup.setOnes();
    const auto f = fit(data, spec);
    for (int z = 0; z < 2; ++z) {
      const auto fixed = mu2(data, f, z, kFixed);
      const auto random = mu2(data, f, z, kRandom);
      CHECK(fixed.estimate == doctest::Approx(mu1(data, z).estimate).epsilon(1e-10));
      CHECK(random.variance - fixed.variance == doctest::Approx(0.0));
    }
  }
}

TEST_CASE("full influence variance for a correctly specified large poisson trial") {
  std::mt19937_64 rng(31);
  const int n = 100000;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y(n);
  std::vector<int> z(n);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = coin(rng) ? 1.0 : 0.0;
    z[static_cast<std::size_t>(i)] = coin(rng) ? 1 : 0;
    y[i] = std::poisson_distribution<int>(std::exp(1.0 + 1.5 * x(i, 0) + 0.4 * z[static_cast<std::size_t>(i)]))(rng);
  }
  TrialDataset data(y, x, z, 2);
  const auto f = fit(data, ModelSpec::canonical(Family::Poisson));
  for (int arm = 0; arm < 2; ++arm) {
    const auto full = mu2(data, f, arm, kFull);
    const auto random = mu2(data, f, arm, kRandom);
    CHECK(full.variance == doctest::Approx(random.variance).epsilon(0.05));
    CHECK(full.estimate == random.estimate);
  }
}

TEST_CASE("confidence intervals") {
  const auto [a, b] = confidence_interval(2.0, 0.0, CiScale::Log);
  CHECK(a == 2.0);
  CHECK(b == 2.0);
  const auto [c, d] = confidence_interval(2.0, 0.0, CiScale::Identity);
  CHECK(c == 2.0);
  CHECK(d == 2.0);

  CHECK(critical_value(0.95) == doctest::Approx(1.959964).epsilon(1e-6));
  const auto [lo, hi] = confidence_interval(1.0, 0.01, CiScale::Log);
  CHECK(lo == doctest::Approx(std::exp(-0.1959964)).epsilon(1e-6));
  CHECK(hi == doctest::Approx(std::exp(0.1959964)).epsilon(1e-6));
  CHECK(lo == doctest::Approx(0.8220).epsilon(1e-4));
  CHECK(hi == doctest::Approx(1.2165).epsilon(1e-4));

  const auto [l2, h2] = confidence_interval(1.536, 0.0123, CiScale::Identity);
  CHECK(1.536 - l2 == doctest::Approx(h2 - 1.536));

  CHECK(kind_of([] { confidence_interval(0.0, 1.0, CiScale::Log); }) ==
        ErrorKind::NonPositiveEstimateForLogScale);
  CHECK(kind_of([] { confidence_interval(-1.0, 1.0, CiScale::Log); }) ==
        ErrorKind::NonPositiveEstimateForLogScale);
}

TEST_CASE("estimates carry ordered intervals") {
  std::mt19937_64 rng(6);
  const auto data = oracle::random_dataset(rng, Family::Poisson, 80, 2, 2, true);
  const auto f = fit(data, ModelSpec::canonical(Family::Poisson, OffsetRule::LogFollowup));
  const EstimateOptions log_scale{CiScale::Log, 0.9, false};
  for (const auto& e : {mu1(data, 1, log_scale), mu2(data, f, 1, kRandom, log_scale), mu3(data, f, 1, log_scale)}) {
    CHECK(e.variance >= 0.0);
    CHECK(e.ci_low <= e.estimate);
    CHECK(e.estimate <= e.ci_high);
    CHECK(e.ci_level == 0.9);
  }
}

TEST_CASE("mu2 refuses a fit from another dataset") {
  std::mt19937_64 rng(1);
  const auto a = oracle::random_dataset(rng, Family::Gaussian, 20, 1, 2, false);
  const auto b = oracle::random_dataset(rng, Family::Gaussian, 25, 1, 2, false);
  const auto f = fit(a, ModelSpec::canonical(Family::Gaussian));
  CHECK(kind_of([&] { mu2(b, f, 1, kRandom); }) == ErrorKind::DimensionMismatch);
  FitResult unconverged = f;
  unconverged.converged = false;
  CHECK(kind_of([&] { mu2(a, unconverged, 1, kRandom); }) == ErrorKind::NotConverged);
}
