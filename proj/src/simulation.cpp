#include <cmath>
#include <cstdlib>
#include <exception>
#include <string>
#include <vector>

#include <omp.h>

#include "stdmarg/errors.hpp"
#include "stdmarg/trial_sim.hpp"

namespace stdmarg {

const CellSummary* SimulationReport::find(int scenario, std::string_view randomization, int arm,
                                          Estimator estimator, VarianceKind method) const {
  for (const auto& c : cells) {
    if (c.scenario == scenario && c.randomization == randomization && c.arm == arm &&
        c.estimator == estimator && c.method == method) {
      return &c;
    }
  }
  return nullptr;
}

int threads_from_environment() {
  const char* value = std::getenv("STDMARG_THREADS");
  if (!value) return 0;
  char* end = nullptr;
  const long parsed = std::strtol(value, &end, 10);
  if (end == value || *end != '\0' || parsed <= 0 || parsed > 4096) return 0;
  return static_cast<int>(parsed);
}

namespace {

struct CellKey {
  int arm;
  Estimator estimator;
  VarianceKind method;
};

struct Outcome {
  double estimate = 0.0;
  bool covered = false;
  bool ok = false;
};

std::vector<CellKey> cell_layout(const SimulationConfig& config) {
  std::vector<CellKey> keys;
  for (int arm : config.arms) {
    for (Estimator e : config.estimators) {
      switch (e) {
        case Estimator::Mu1:
          keys.push_back({arm, e, VarianceKind::IidSandwich});
          break;
        case Estimator::Mu2:
          for (VarianceKind m : config.mu2_methods) keys.push_back({arm, e, m});
          break;
        case Estimator::Mu3:
          keys.push_back({arm, e, VarianceKind::Augmented});
          break;
      }
    }
  }
  return keys;
}

void validate(const SimulationConfig& config) {
  if (config.replicates < 1) throw Error(ErrorKind::InvalidConfig, "replicates must be positive");
  if (config.n < 8) throw Error(ErrorKind::InvalidConfig, "n must be at least 8");
  if (config.scenarios.empty()) throw Error(ErrorKind::InvalidConfig, "no scenarios requested");
  if (config.schemes.empty()) throw Error(ErrorKind::InvalidConfig, "no randomization schemes requested");
  if (config.estimators.empty()) throw Error(ErrorKind::InvalidConfig, "no estimators requested");
  if (config.arms.empty()) throw Error(ErrorKind::InvalidConfig, "no arms requested");
  for (int s : config.scenarios) ScenarioSpec::standard(s, config.n);
  for (const auto& scheme : config.schemes) {
    const int k = static_cast<int>(scheme.p_assign.size());
    for (int arm : config.arms) {
      if (arm < 0 || arm >= k) throw Error(ErrorKind::InvalidConfig, "arm " + std::to_string(arm) + " out of range");
    }
  }
  for (VarianceKind m : config.mu2_methods) {
    if (m != VarianceKind::FixedX && m != VarianceKind::RandomX && m != VarianceKind::FullInfluence) {
      throw Error(ErrorKind::InvalidConfig, "mu2 variance must be fixed_x, random_x or full_influence");
    }
  }
}

// One replicate of one (scenario, scheme) design; writes one Outcome per cell.
void run_replicate(const ScenarioSpec& spec, const RandomizationScheme& scheme,
                   const SimulationConfig& config, const std::vector<CellKey>& cells,
                   std::uint64_t replicate, Outcome* out) {
  const TrialDataset data = generate_scenario(spec, scheme, config.seed, replicate);
  const EstimateOptions options{config.ci_scale, config.ci_level, config.printed_variance};

  std::optional<FitResult> fitted;
  bool fit_failed = false;
  const auto need_fit = [&] {
    if (!fitted && !fit_failed) {
      try {
        fitted = fit(data, spec.working_spec());
      } catch (const Error&) {
        fit_failed = true;
      }
    }
    return fitted.has_value();
  };

  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& key = cells[c];
    const double truth = analytic_marginal_mean(spec, key.arm);
    Outcome& o = out[c];
    try {
      MarginalEstimate est;
      switch (key.estimator) {
        case Estimator::Mu1:
          est = mu1(data, key.arm, options);
          break;
        case Estimator::Mu2:
          if (!need_fit()) continue;
          est = mu2(data, *fitted, key.arm, {key.method, config.vcov_source}, options);
          break;
        case Estimator::Mu3:
          if (!need_fit()) continue;
          est = mu3(data, *fitted, key.arm, options);
          break;
      }
      o.estimate = est.estimate;
      o.covered = est.ci_low <= truth && truth <= est.ci_high;
      o.ok = true;
    } catch (const Error&) {
      o.ok = false;
    }
  }
}

struct Stats {
  double mean = 0.0;
  double variance = 0.0;
  double fourth = 0.0;
};

Stats stats_of(const std::vector<double>& v) {
  Stats s;
  const double n = static_cast<double>(v.size());
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= n;
  double m2 = 0.0;
  double m4 = 0.0;
  for (double x : v) {
    const double d = (x - s.mean) * (x - s.mean);
    m2 += d;
    m4 += d * d;
  }
  s.variance = v.size() > 1 ? m2 / (n - 1.0) : 0.0;
  s.fourth = m4 / n;
  return s;
}

// Ratio of empirical variances var(ref)/var(est) over paired replicates, with
// a delta-method Monte Carlo standard error.
std::pair<double, double> variance_ratio(const std::vector<double>& ref, const std::vector<double>& est) {
  const auto n = static_cast<double>(ref.size());
  const Stats sa = stats_of(ref);
  const Stats sb = stats_of(est);
  std::vector<double> a(ref.size()), b(est.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    a[i] = (ref[i] - sa.mean) * (ref[i] - sa.mean);
    b[i] = (est[i] - sb.mean) * (est[i] - sb.mean);
  }
  const Stats ma = stats_of(a);
  const Stats mb = stats_of(b);
  double cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) cov += (a[i] - ma.mean) * (b[i] - mb.mean);
  cov /= (n - 1.0);
  const double ratio = ma.mean / mb.mean;
  const double var = (ma.variance / (mb.mean * mb.mean) - 2.0 * ma.mean * cov / std::pow(mb.mean, 3) +
                      ma.mean * ma.mean * mb.variance / std::pow(mb.mean, 4)) / n;
  return {ratio, std::sqrt(std::max(var, 0.0))};
}

std::vector<CellSummary> summarise(int scenario, const std::string& randomization, const ScenarioSpec& spec,
                                   const std::vector<CellKey>& cells, const std::vector<Outcome>& results,
                                   std::size_t replicates, const SimulationConfig& config) {
  const std::size_t width = cells.size();
  std::vector<CellSummary> out;
  for (std::size_t c = 0; c < width; ++c) {
    const auto& key = cells[c];
    CellSummary s;
    s.scenario = scenario;
    s.randomization = randomization;
    s.arm = key.arm;
    s.estimator = key.estimator;
    s.method = key.method;
    s.truth = analytic_marginal_mean(spec, key.arm);

    std::size_t ref_cell = width;
    for (std::size_t r = 0; r < width; ++r) {
      if (cells[r].arm == key.arm && cells[r].estimator == Estimator::Mu1) ref_cell = r;
    }

    std::vector<double> estimates;
    std::vector<double> paired_ref, paired_est;
    std::size_t covered = 0;
    for (std::size_t rep = 0; rep < replicates; ++rep) {
      const Outcome& o = results[rep * width + c];
      if (!o.ok) {
        ++s.failures;
        continue;
      }
      estimates.push_back(o.estimate);
      covered += o.covered;
      if (ref_cell < width && key.estimator != Estimator::Mu1 && results[rep * width + ref_cell].ok) {
        paired_ref.push_back(results[rep * width + ref_cell].estimate);
        paired_est.push_back(o.estimate);
      }
    }
    s.replicates = estimates.size();
    if (static_cast<double>(s.failures) > config.max_failure_rate * static_cast<double>(replicates)) {
      throw Error(ErrorKind::SimulationAborted,
                  "scenario " + std::to_string(scenario) + " " + std::string(to_string(key.estimator)) +
                      ": " + std::to_string(s.failures) + " of " + std::to_string(replicates) +
                      " replicates failed");
    }
    if (estimates.empty()) {
      out.push_back(s);
      continue;
    }
    // A single replicate has a mean and a coverage indicator but no spread.
    const double r = static_cast<double>(estimates.size());
    const Stats st = stats_of(estimates);
    s.mean = st.mean;
    s.bias = st.mean - s.truth;
    const double cov = static_cast<double>(covered) / r;
    s.coverage = 100.0 * cov;
    s.coverage_mc_se = 100.0 * std::sqrt(cov * (1.0 - cov) / r);
    if (estimates.size() >= 2) {
      s.mean_mc_se = std::sqrt(st.variance / r);
      s.bias_mc_se = s.mean_mc_se;
      s.empirical_variance = st.variance;
      s.empirical_variance_mc_se = std::sqrt(std::max(st.fourth - st.variance * st.variance, 0.0) / r);
    }
    if (paired_est.size() >= 2) {
      const auto [ratio, se] = variance_ratio(paired_ref, paired_est);
      s.relative_efficiency = ratio;
      s.relative_efficiency_mc_se = se;
    }
    out.push_back(s);
  }
  return out;
}

struct Design {
  int scenario;
  ScenarioSpec spec;
  RandomizationScheme scheme;
};

std::vector<Design> designs_of(const SimulationConfig& config) {
  std::vector<Design> designs;
  for (int s : config.scenarios) {
    for (const auto& scheme : config.schemes) designs.push_back({s, ScenarioSpec::standard(s, config.n), scheme});
  }
  return designs;
}

SimulationReport assemble(const SimulationConfig& config, const std::vector<Design>& designs,
                          const std::vector<CellKey>& cells, const std::vector<Outcome>& results,
                          int oracle_threads) {
  SimulationReport report;
  report.config = config;
  const auto reps = static_cast<std::size_t>(config.replicates);
  const std::size_t block = reps * cells.size();
  for (std::size_t d = 0; d < designs.size(); ++d) {
    const std::vector<Outcome> slice(results.begin() + static_cast<std::ptrdiff_t>(d * block),
                                     results.begin() + static_cast<std::ptrdiff_t>((d + 1) * block));
    auto summaries = summarise(designs[d].scenario, designs[d].scheme.label(), designs[d].spec, cells, slice,
                               reps, config);
    report.cells.insert(report.cells.end(), summaries.begin(), summaries.end());
  }
  for (int s : config.scenarios) {
    const auto spec = ScenarioSpec::standard(s, config.n);
    for (int arm : config.arms) {
      TruthSummary t;
      t.scenario = s;
      t.arm = arm;
      t.analytic = analytic_marginal_mean(spec, arm);
      if (config.oracle_draws >= 2) {
        const std::uint64_t oracle_seed = stream_seed(config.seed, static_cast<std::uint64_t>(s * 64 + arm),
                                                      StreamRole::Oracle);
        t.monte_carlo = oracle_threads == 1
                            ? true_marginal_mean_serial(spec, arm, config.oracle_draws, oracle_seed)
                            : true_marginal_mean(spec, arm, config.oracle_draws, oracle_seed, oracle_threads);
      }
      report.truths.push_back(t);
    }
  }
  return report;
}

}  // namespace

SimulationReport run_simulation_serial(const SimulationConfig& config) {
  validate(config);
  const auto designs = designs_of(config);
  const auto cells = cell_layout(config);
  const auto reps = static_cast<std::size_t>(config.replicates);
  std::vector<Outcome> results(designs.size() * reps * cells.size());
  for (std::size_t d = 0; d < designs.size(); ++d) {
    for (std::size_t rep = 0; rep < reps; ++rep) {
      run_replicate(designs[d].spec, designs[d].scheme, config, cells, rep,
                    &results[(d * reps + rep) * cells.size()]);
    }
  }
  return assemble(config, designs, cells, results, 1);
}

SimulationReport run_simulation(const SimulationConfig& config, int threads) {
  validate(config);
  const auto designs = designs_of(config);
  const auto cells = cell_layout(config);
  const auto reps = static_cast<std::size_t>(config.replicates);
  std::vector<Outcome> results(designs.size() * reps * cells.size());
  const int nt = threads > 0 ? threads : omp_get_max_threads();
  const auto tasks = static_cast<std::ptrdiff_t>(designs.size() * reps);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(tasks));

#pragma omp parallel for schedule(dynamic, 16) num_threads(nt)
  for (std::ptrdiff_t task = 0; task < tasks; ++task) {
    const auto t = static_cast<std::size_t>(task);
    const std::size_t d = t / reps;
    const std::size_t rep = t % reps;
    try {
      run_replicate(designs[d].spec, designs[d].scheme, config, cells, rep, &results[t * cells.size()]);
    } catch (...) {
      errors[t] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return assemble(config, designs, cells, results, nt);
}

}  // namespace stdmarg
