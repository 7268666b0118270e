#include <algorithm>
#include <string>
#include <vector>

#include "io_util.hpp"
#include "stdmarg/cli_io.hpp"

namespace stdmarg {

using io::Json;

namespace {

const std::string kWhere = "simulation config";

RandomizationScheme parse_scheme(const Json& obj) {
  io::require_keys(obj, {"kind", "block_size", "strata", "p_assign"}, "randomization");
  RandomizationScheme s;
  s.kind = parse_randomization_kind(io::get<std::string>(obj, "kind", "randomization"));
  s.block_size = io::get_or<int>(obj, "block_size", s.block_size, "randomization");
  s.strata_covariates = io::get_or<std::vector<int>>(obj, "strata", s.strata_covariates, "randomization");
  s.p_assign = io::get_or<std::vector<double>>(obj, "p_assign", s.p_assign, "randomization");
  if (s.block_size < 1) throw Error(ErrorKind::InvalidConfig, "randomization: block_size must be positive");
  for (int c : s.strata_covariates) {
    // the simulated trials carry the single covariate X
    if (c != 0) throw Error(ErrorKind::InvalidConfig, "randomization: strata must refer to covariate 0");
  }
  return s;
}

template <typename T>
std::vector<T> one_or_many(const Json& v, const std::string& key) {
  try {
    if (v.is_array()) return v.get<std::vector<T>>();
    return {v.get<T>()};
  } catch (const Json::exception&) {
    throw Error(ErrorKind::InvalidConfig, kWhere + ": '" + key + "' has the wrong type");
  }
}

Json config_json(const SimulationConfig& c) {
  Json j;
  j["scenarios"] = c.scenarios;
  j["n"] = c.n;
  j["replicates"] = c.replicates;
  j["seed"] = c.seed;
  j["randomization"] = Json::array();
  for (const auto& s : c.schemes) {
    j["randomization"].push_back({{"kind", to_string(s.kind)},
                                  {"block_size", s.block_size},
                                  {"strata", s.strata_covariates},
                                  {"p_assign", s.p_assign}});
  }
  Json est = Json::array();
  for (auto e : c.estimators) est.push_back(to_string(e));
  j["estimators"] = est;
  Json methods = Json::array();
  for (auto m : c.mu2_methods) methods.push_back(to_string(m));
  j["variance_methods"] = methods;
  j["vcov_source"] = to_string(c.vcov_source);
  j["ci_scale"] = to_string(c.ci_scale);
  j["ci_level"] = c.ci_level;
  j["printed_variance"] = c.printed_variance;
  j["arms"] = c.arms;
  j["oracle_draws"] = c.oracle_draws;
  j["max_failure_rate"] = c.max_failure_rate;
  return j;
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

SimulationConfig parse_simulation_config(std::string_view json_text) {
  const Json root = io::parse_json(json_text, kWhere);
  io::require_keys(root,
                   {"schema_version", "scenario", "scenarios", "n", "replicates", "seed", "randomization",
                    "estimators", "variance_methods", "vcov_source", "ci_scale", "ci_level", "printed_variance",
                    "arms", "oracle_draws", "max_failure_rate"},
                   kWhere);
  io::check_schema_version(root, kSchemaVersion, kWhere);
  if (root.contains("scenario") && root.contains("scenarios")) {
    throw Error(ErrorKind::InvalidConfig, kWhere + ": give either 'scenario' or 'scenarios'");
  }

  SimulationConfig c;
  for (const char* key : {"scenario", "scenarios"}) {
    if (root.contains(key)) c.scenarios = one_or_many<int>(root.at(key), key);
  }
  c.n = io::get_or<int>(root, "n", c.n, kWhere);
  c.replicates = io::get_or<int>(root, "replicates", c.replicates, kWhere);
  c.seed = io::get_or<std::uint64_t>(root, "seed", c.seed, kWhere);
  if (root.contains("randomization")) {
    const Json& r = root.at("randomization");
    c.schemes.clear();
    if (r.is_array()) {
      for (const auto& s : r) c.schemes.push_back(parse_scheme(s));
    } else {
      c.schemes.push_back(parse_scheme(r));
    }
  }
  if (root.contains("estimators")) {
    c.estimators.clear();
    for (const auto& e : io::get<std::vector<std::string>>(root, "estimators", kWhere)) {
      c.estimators.push_back(parse_estimator(e));
    }
  }
  if (root.contains("variance_methods")) {
    c.mu2_methods.clear();
    for (const auto& v : io::get<std::vector<std::string>>(root, "variance_methods", kWhere)) {
      c.mu2_methods.push_back(parse_variance_kind(v));
    }
  }
  if (root.contains("vcov_source")) c.vcov_source = parse_vcov_source(io::get<std::string>(root, "vcov_source", kWhere));
  if (root.contains("ci_scale")) c.ci_scale = parse_ci_scale(io::get<std::string>(root, "ci_scale", kWhere));
  c.ci_level = io::get_or<double>(root, "ci_level", c.ci_level, kWhere);
  c.printed_variance = io::get_or<bool>(root, "printed_variance", c.printed_variance, kWhere);
  if (root.contains("arms")) c.arms = one_or_many<int>(root.at("arms"), "arms");
  c.oracle_draws = io::get_or<std::size_t>(root, "oracle_draws", c.oracle_draws, kWhere);
  c.max_failure_rate = io::get_or<double>(root, "max_failure_rate", c.max_failure_rate, kWhere);
  if (!(c.ci_level > 0.0 && c.ci_level < 1.0)) throw Error(ErrorKind::InvalidConfig, kWhere + ": ci_level must lie in (0, 1)");
  return c;
}

SimulationConfig load_simulation_config(const std::string& path) {
  return parse_simulation_config(io::read_file(path));
}

std::string simulation_report_json(const SimulationReport& report) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["config"] = config_json(report.config);
  j["truths"] = Json::array();
  for (const auto& t : report.truths) {
    Json tj{{"scenario", t.scenario}, {"arm", t.arm}, {"analytic", t.analytic}};
    if (t.monte_carlo) {
      tj["monte_carlo"] = {{"estimate", t.monte_carlo->estimate},
                           {"mc_se", t.monte_carlo->mc_se},
                           {"draws", t.monte_carlo->draws}};
    } else {
      tj["monte_carlo"] = nullptr;
    }
    j["truths"].push_back(tj);
  }
  j["cells"] = Json::array();
  for (const auto& c : report.cells) {
    j["cells"].push_back({{"scenario", c.scenario},
                          {"randomization", c.randomization},
                          {"arm", c.arm},
                          {"estimator", to_string(c.estimator)},
                          {"variance_method", to_string(c.method)},
                          {"truth", c.truth},
                          {"replicates", c.replicates},
                          {"failures", c.failures},
                          {"mean", c.mean},
                          {"mean_mc_se", c.mean_mc_se},
                          {"bias", c.bias},
                          {"bias_mc_se", c.bias_mc_se},
                          {"empirical_variance", c.empirical_variance},
                          {"empirical_variance_mc_se", c.empirical_variance_mc_se},
                          {"relative_efficiency", optional_json(c.relative_efficiency)},
                          {"relative_efficiency_mc_se", optional_json(c.relative_efficiency_mc_se)},
                          {"coverage", c.coverage},
                          {"coverage_mc_se", c.coverage_mc_se}});
  }
  return j.dump(2) + "\n";
}

std::string simulation_report_text(const SimulationReport& report) {
  const auto& config = report.config;
  std::string out;
  for (const auto& scheme : config.schemes) {
    const std::string label = scheme.label();
    for (int arm : config.arms) {
      out += (out.empty() ? "" : "\n") + std::string("randomization ") + label + ", arm " + std::to_string(arm) +
             ", " + std::to_string(config.replicates) + " replicates of n = " + std::to_string(config.n) + "\n";
      std::vector<std::vector<std::string>> rows;
      std::vector<std::string> header{"", "Scenario"};
      for (int s : config.scenarios) header.push_back(std::to_string(s));
      rows.push_back(header);

      auto add = [&](const std::string& group, const std::string& name, Estimator e, VarianceKind m, auto value) {
        std::vector<std::string> line{group, name};
        bool any = false;
        for (int s : config.scenarios) {
          const CellSummary* c = report.find(s, label, arm, e, m);
          line.push_back(c ? value(*c) : "-");
          any = any || c != nullptr;
        }
        if (any) rows.push_back(line);
      };
      auto mean = [](const CellSummary& c) { return io::fixed(c.mean, 3); };
      auto bias = [](const CellSummary& c) { return io::fixed(c.bias, 3) + " (" + io::fixed(c.bias_mc_se, 3) + ")"; };
      auto rel = [](const CellSummary& c) {
        return c.relative_efficiency ? io::fixed(*c.relative_efficiency, 2) : std::string("-");
      };
      auto cov = [](const CellSummary& c) { return io::fixed(c.coverage, 2); };

      std::vector<std::string> truth{"", "True mean"};
      for (int s : config.scenarios) truth.push_back(io::fixed(analytic_marginal_mean(ScenarioSpec::standard(s), arm), 3));
      rows.push_back(truth);

      add("mu1", "Mean", Estimator::Mu1, VarianceKind::IidSandwich, mean);
      add("", "Bias", Estimator::Mu1, VarianceKind::IidSandwich, bias);
      add("", "95% CI Cov.", Estimator::Mu1, VarianceKind::IidSandwich, cov);
      if (!config.mu2_methods.empty()) {
        const auto first = config.mu2_methods.front();
        add("mu2", "Mean", Estimator::Mu2, first, mean);
        add("", "Bias", Estimator::Mu2, first, bias);
        add("", "Rel. eff.", Estimator::Mu2, first, rel);
        for (auto m : config.mu2_methods) {
          const std::string name = m == VarianceKind::FixedX    ? "Fixed X 95% CI Cov."
                                   : m == VarianceKind::RandomX ? "Random X 95% CI Cov."
                                                                : "Full influence 95% CI Cov.";
          add("", name, Estimator::Mu2, m, cov);
        }
      }
      add("mu3", "Mean", Estimator::Mu3, VarianceKind::Augmented, mean);
      add("", "Bias", Estimator::Mu3, VarianceKind::Augmented, bias);
      add("", "Rel. eff.", Estimator::Mu3, VarianceKind::Augmented, rel);
      add("", "95% CI Cov.", Estimator::Mu3, VarianceKind::Augmented, cov);
      out += io::align(rows, 2);
    }
  }
  std::size_t failures = 0;
  for (const auto& c : report.cells) failures += c.failures;
  out += "\nbias in parentheses: Monte Carlo SE; failed fits excluded: " + std::to_string(failures) + "\n";
  return out;
}

}  // namespace stdmarg
