#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "stdmarg/dataset.hpp"
#include "stdmarg/marginal.hpp"

namespace stdmarg {

// ---------------------------------------------------------------------------
// Random streams

enum class StreamRole : std::uint64_t {
  Covariate = 1,
  Followup = 2,
  Frailty = 3,
  Outcome = 4,
  Randomization = 5,
  Oracle = 6,
};

/// Seed for the stream keyed by (master seed, index, role). Streams with
/// different keys are statistically independent and never share state.
std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index, StreamRole role) noexcept;
std::mt19937_64 make_stream(std::uint64_t master, std::uint64_t index, StreamRole role);

// ---------------------------------------------------------------------------
// Randomization

enum class RandomizationKind { Simple, PermutedBlock, StratifiedPermutedBlock };

std::string_view to_string(RandomizationKind kind) noexcept;
RandomizationKind parse_randomization_kind(std::string_view name);

struct RandomizationScheme {
  RandomizationKind kind = RandomizationKind::PermutedBlock;
  int block_size = 4;
  std::vector<int> strata_covariates{0};
  std::vector<double> p_assign{0.5, 0.5};

  /// Short label such as "permuted_block(4)".
  std::string label() const;
};

/// Arm for each of the n rows of `covariates`.
std::vector<int> assign_treatments(int n, const RandomizationScheme& scheme,
                                   const Eigen::MatrixXd& covariates, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Scenarios

enum class FrailtyKind { Gamma, LogNormal };
enum class WorkingModel { NegBin2, Poisson };

/// Poisson counts with mean gamma * T * exp(3X + Z + interaction * X Z),
/// X ~ Bernoulli(1/2), a random quarter of patients followed for U(0, 1).
struct ScenarioSpec {
  int id = 1;
  int n = 400;
  FrailtyKind frailty = FrailtyKind::Gamma;
  double covariate_effect = 3.0;
  double arm_effect = 1.0;
  double interaction = 0.0;
  double partial_followup_fraction = 0.25;
  WorkingModel working_model = WorkingModel::NegBin2;

  /// Scenarios 1-4 of the simulation study.
  static ScenarioSpec standard(int id, int n = 400);

  double linear_predictor(double x, int z) const noexcept {
    return covariate_effect * x + arm_effect * z + interaction * x * z;
  }
  ModelSpec working_spec() const;
};

double draw_frailty(FrailtyKind kind, std::mt19937_64& rng);

TrialDataset generate_scenario(const ScenarioSpec& spec, const RandomizationScheme& scheme,
                               std::uint64_t seed, std::uint64_t replicate_index);

struct OracleMean {
  double estimate = 0.0;
  double mc_se = 0.0;
  std::size_t draws = 0;
};

/// E[gamma exp(lp(X, z))], the rate targeted by every estimator.
double analytic_marginal_mean(const ScenarioSpec& spec, int z);

/// Monte Carlo value of the same expectation. `threads` <= 0 uses the OpenMP
/// default. Bit-identical to the serial version for any thread count.
OracleMean true_marginal_mean(const ScenarioSpec& spec, int z, std::size_t draws = 10'000'000,
                              std::uint64_t seed = 20240601, int threads = 0);
OracleMean true_marginal_mean_serial(const ScenarioSpec& spec, int z, std::size_t draws = 10'000'000,
                                     std::uint64_t seed = 20240601);

// ---------------------------------------------------------------------------
// Simulation study

struct SimulationConfig {
  std::vector<int> scenarios{1};
  int n = 400;
  int replicates = 10'000;
  std::uint64_t seed = 1;
  std::vector<RandomizationScheme> schemes{RandomizationScheme{}};
  std::vector<Estimator> estimators{Estimator::Mu1, Estimator::Mu2, Estimator::Mu3};
  std::vector<VarianceKind> mu2_methods{VarianceKind::FixedX, VarianceKind::RandomX};
  VcovSource vcov_source = VcovSource::Sandwich;
  CiScale ci_scale = CiScale::Log;
  double ci_level = 0.95;
  bool printed_variance = false;
  std::vector<int> arms{1};
  std::size_t oracle_draws = 0;
  double max_failure_rate = 0.05;
};

struct CellSummary {
  int scenario = 1;
  std::string randomization;
  int arm = 1;
  Estimator estimator = Estimator::Mu1;
  VarianceKind method = VarianceKind::IidSandwich;
  double truth = 0.0;
  std::size_t replicates = 0;
  std::size_t failures = 0;
  double mean = 0.0;
  double mean_mc_se = 0.0;
  double bias = 0.0;
  double bias_mc_se = 0.0;
  double empirical_variance = 0.0;
  double empirical_variance_mc_se = 0.0;
  std::optional<double> relative_efficiency;
  std::optional<double> relative_efficiency_mc_se;
  double coverage = 0.0;
  double coverage_mc_se = 0.0;
};

struct TruthSummary {
  int scenario = 1;
  int arm = 1;
  double analytic = 0.0;
  std::optional<OracleMean> monte_carlo;
};

struct SimulationReport {
  SimulationConfig config;
  std::vector<TruthSummary> truths;
  std::vector<CellSummary> cells;

  const CellSummary* find(int scenario, std::string_view randomization, int arm, Estimator estimator,
                          VarianceKind method) const;
};

/// Replicates run in parallel with OpenMP; the report is bit-identical to
/// `run_simulation_serial` for every thread count. `threads` <= 0 uses the
/// OpenMP default.
SimulationReport run_simulation(const SimulationConfig& config, int threads = 0);
SimulationReport run_simulation_serial(const SimulationConfig& config);

/// Parses STDMARG_THREADS; 0 when unset or invalid.
int threads_from_environment();

}  // namespace stdmarg
