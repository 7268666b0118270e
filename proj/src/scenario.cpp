#include <cmath>
#include <string>
#include <vector>

#include <omp.h>

#include "stdmarg/errors.hpp"
#include "stdmarg/trial_sim.hpp"

namespace stdmarg {

ScenarioSpec ScenarioSpec::standard(int id, int n) {
  if (id < 1 || id > 4) throw Error(ErrorKind::InvalidConfig, "scenario must be 1-4");
  ScenarioSpec spec;
  spec.id = id;
  spec.n = n;
  spec.frailty = id == 2 ? FrailtyKind::LogNormal : FrailtyKind::Gamma;
  spec.interaction = id >= 3 ? -1.5 : 0.0;
  spec.working_model = id == 4 ? WorkingModel::Poisson : WorkingModel::NegBin2;
  return spec;
}

ModelSpec ScenarioSpec::working_spec() const {
  return ModelSpec::canonical(working_model == WorkingModel::Poisson ? Family::Poisson : Family::NegBin2,
                              OffsetRule::LogFollowup);
}

double draw_frailty(FrailtyKind kind, std::mt19937_64& rng) {
  if (kind == FrailtyKind::Gamma) {
    // shape 2, scale 1/2: mean 1, variance 1/2
    return std::gamma_distribution<double>(2.0, 0.5)(rng);
  }
  // natural-scale mean 1 and variance 1/2
  static const double sigma2 = std::log(1.5);
  return std::lognormal_distribution<double>(-0.5 * sigma2, std::sqrt(sigma2))(rng);
}

TrialDataset generate_scenario(const ScenarioSpec& spec, const RandomizationScheme& scheme,
                               std::uint64_t seed, std::uint64_t replicate_index) {
  const int n = spec.n;
  auto x_rng = make_stream(seed, replicate_index, StreamRole::Covariate);
  auto t_rng = make_stream(seed, replicate_index, StreamRole::Followup);
  auto z_rng = make_stream(seed, replicate_index, StreamRole::Randomization);
  auto g_rng = make_stream(seed, replicate_index, StreamRole::Frailty);
  auto y_rng = make_stream(seed, replicate_index, StreamRole::Outcome);

  Eigen::MatrixXd x(n, 1);
  std::bernoulli_distribution covariate(0.5);
  for (int i = 0; i < n; ++i) x(i, 0) = covariate(x_rng) ? 1.0 : 0.0;

  Eigen::VectorXd t(n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const bool partial = unit(t_rng) < spec.partial_followup_fraction;
    // 1 - U lies in (0, 1], keeping follow-up strictly positive
    const double u = 1.0 - unit(t_rng);
    t[i] = partial ? u : 1.0;
  }

  std::vector<int> z = assign_treatments(n, scheme, x, z_rng);
  const int k = static_cast<int>(scheme.p_assign.size());

  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const double gamma = draw_frailty(spec.frailty, g_rng);
    const double mean = gamma * t[i] * std::exp(spec.linear_predictor(x(i, 0), z[static_cast<std::size_t>(i)]));
    y[i] = static_cast<double>(std::poisson_distribution<long long>(mean)(y_rng));
  }
  return TrialDataset(std::move(y), std::move(x), std::move(z), std::move(t), k);
}

double analytic_marginal_mean(const ScenarioSpec& spec, int z) {
  // E(gamma) = 1 for both frailty laws and X ~ Bernoulli(1/2)
  return 0.5 * (std::exp(spec.linear_predictor(0.0, z)) + std::exp(spec.linear_predictor(1.0, z)));
}

namespace {

constexpr std::size_t kOracleChunk = 1 << 16;

struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
};

Moments oracle_chunk(const ScenarioSpec& spec, int z, std::uint64_t seed, std::size_t chunk,
                     std::size_t count) {
  auto rng = make_stream(seed, chunk, StreamRole::Oracle);
  std::bernoulli_distribution covariate(0.5);
  const double low = std::exp(spec.linear_predictor(0.0, z));
  const double high = std::exp(spec.linear_predictor(1.0, z));
  Moments m;
  for (std::size_t i = 0; i < count; ++i) {
    const double v = (covariate(rng) ? high : low) * draw_frailty(spec.frailty, rng);
    m.sum += v;
    m.sum_sq += v * v;
  }
  return m;
}

OracleMean combine(const std::vector<Moments>& parts, std::size_t draws) {
  Moments total;
  for (const auto& p : parts) {
    total.sum += p.sum;
    total.sum_sq += p.sum_sq;
  }
  const double n = static_cast<double>(draws);
  const double mean = total.sum / n;
  const double var = std::max(0.0, (total.sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n), draws};
}

std::size_t chunk_size(std::size_t c, std::size_t draws) {
  return std::min(kOracleChunk, draws - c * kOracleChunk);
}

}  // namespace

OracleMean true_marginal_mean_serial(const ScenarioSpec& spec, int z, std::size_t draws, std::uint64_t seed) {
  if (draws < 2) throw Error(ErrorKind::InvalidArgument, "need at least two oracle draws");
  const std::size_t chunks = (draws + kOracleChunk - 1) / kOracleChunk;
  std::vector<Moments> parts(chunks);
  for (std::size_t c = 0; c < chunks; ++c) parts[c] = oracle_chunk(spec, z, seed, c, chunk_size(c, draws));
  return combine(parts, draws);
}

OracleMean true_marginal_mean(const ScenarioSpec& spec, int z, std::size_t draws, std::uint64_t seed,
                              int threads) {
  if (draws < 2) throw Error(ErrorKind::InvalidArgument, "need at least two oracle draws");
  const std::size_t chunks = (draws + kOracleChunk - 1) / kOracleChunk;
  std::vector<Moments> parts(chunks);
  const int nt = threads > 0 ? threads : omp_get_max_threads();
  const auto count = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for schedule(static) num_threads(nt)
  for (std::ptrdiff_t c = 0; c < count; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    parts[cu] = oracle_chunk(spec, z, seed, cu, chunk_size(cu, draws));
  }
  return combine(parts, draws);
}

}  // namespace stdmarg
