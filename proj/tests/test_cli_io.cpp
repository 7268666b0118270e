#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "stdmarg/cli_io.hpp"

using namespace stdmarg;

namespace {

LoadSchema schema_y_arm(std::vector<std::string> covariates = {"x"}) {
  LoadSchema s;
  s.outcome = "y";
  s.treatment = "arm";
  s.covariates = std::move(covariates);
  return s;
}

LoadedDataset read(const std::string& csv, const LoadSchema& schema) {
  std::istringstream in(csv);
  return read_dataset(in, schema);
}

Error error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  FAIL("expected an Error");
  return Error(ErrorKind::InvalidArgument, "");
}

const std::string kD4 = "y,x,arm\n1,0,0\n3,1,0\n2,0,1\n6,1,1\n";

const std::string kD4Config = R"({
  "schema_version": 1,
  "columns": {"outcome": "y", "treatment": "arm", "covariates": ["x"]},
  "model": {"family": "gaussian"},
  "estimators": ["mu1", "mu2"],
  "variance_methods": ["fixed_x", "random_x"]
})";

std::string to_csv(const TrialDataset& d) {
  std::string out = "count,treat,x,followup\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    char line[128];
    std::snprintf(line, sizeof line, "%.17g,%s,%.17g,%.17g\n", d.outcome[ii], d.arm[i] ? "active" : "control",
                  d.covariates(ii, 0), d.followup[ii]);
    out += line;
  }
  return out;
}

}  // namespace

TEST_CASE("D4 loads as one covariate, two arms, unit follow-up") {
  const auto loaded = read(kD4, schema_y_arm());
  const auto& d = loaded.data;
  CHECK(d.size() == 4);
  CHECK(d.num_covariates() == 1);
  CHECK(d.num_arms == 2);
  CHECK(d.unit_followup());
  CHECK(d.outcome[3] == 6.0);
  CHECK(d.arm == std::vector<int>{0, 0, 1, 1});
  CHECK(loaded.arm_labels == std::vector<std::string>{"0", "1"});
  CHECK(loaded.covariate_names == std::vector<std::string>{"x"});
}

TEST_CASE("loader error paths name the row and column") {
  const auto missing = error_of([] { read("y,x,arm\n1,0,0\n,1,0\n2,0,1\n", schema_y_arm()); });
  CHECK(missing.kind() == ErrorKind::MissingValue);
  CHECK(missing.detail().find("row 2") != std::string::npos);
  CHECK(missing.detail().find("'y'") != std::string::npos);

  CHECK(error_of([] { read("y,x,arm\n1,NA,0\n2,0,1\n", schema_y_arm()); }).kind() == ErrorKind::MissingValue);
  const auto text = error_of([] { read("y,x,arm\n1,abc,0\n2,0,1\n", schema_y_arm()); });
  CHECK(text.kind() == ErrorKind::NonNumericValue);
  CHECK(text.detail().find("abc") != std::string::npos);
  CHECK(error_of([] { read("y,x,arm\n1,0,0\n2,0,1\n", schema_y_arm({"age"})); }).kind() == ErrorKind::MissingColumn);
  CHECK(error_of([] { read("y,x,arm\n1,0\n", schema_y_arm()); }).kind() == ErrorKind::DimensionMismatch);
  CHECK(error_of([] { read("y,x,arm\n", schema_y_arm()); }).kind() == ErrorKind::InvalidArgument);

  auto with_t = schema_y_arm();
  with_t.followup = "t";
  const auto t0 = error_of([&] { read("y,x,arm,t\n1,0,0,1\n2,0,1,0\n", with_t); });
  CHECK(t0.kind() == ErrorKind::NonPositiveFollowup);
  CHECK(t0.detail().find("row 2") != std::string::npos);
}

TEST_CASE("text treatment labels are coded lexicographically") {
  const std::string csv = "y,x,arm\n1,0,placebo\n2,1,benra4\n3,0,benra8\n4,1,placebo\n5,0,benra8\n6,1,benra4\n";
  const auto loaded = read(csv, schema_y_arm());
  CHECK(loaded.data.num_arms == 3);
  CHECK(loaded.arm_labels == std::vector<std::string>{"benra4", "benra8", "placebo"});
  CHECK(loaded.data.arm == std::vector<int>{2, 0, 1, 2, 1, 0});

  auto ordered = schema_y_arm();
  ordered.treatment_levels = {"placebo", "benra4", "benra8"};
  const auto reordered = read(csv, ordered);
  CHECK(reordered.data.arm == std::vector<int>{0, 1, 2, 0, 2, 1});

  ordered.treatment_levels = {"placebo", "benra4"};
  CHECK(error_of([&] { read(csv, ordered); }).kind() == ErrorKind::InvalidConfig);
  ordered.treatment_levels = {"placebo", "benra4", "benra8", "benra30"};
  CHECK(error_of([&] { read(csv, ordered); }).kind() == ErrorKind::EmptyArm);
}

TEST_CASE("numeric treatment labels sort by value") {
  const auto loaded = read("y,x,arm\n1,0,10\n2,1,2\n3,0,10\n4,1,2\n", schema_y_arm());
  CHECK(loaded.arm_labels == std::vector<std::string>{"2", "10"});
  CHECK(loaded.data.arm == std::vector<int>{1, 0, 1, 0});
}

TEST_CASE("quoted fields, CRLF line ends and blank lines") {
  const std::string csv = "\"y\",\"site name\",arm\r\n1,\"north, upper\",a\r\n2,\"say \"\"hi\"\"\",b\r\n\r\n3,south,a\r\n";
  auto schema = schema_y_arm({"site name"});
  schema.categorical = {"site name"};
  const auto loaded = read(csv, schema);
  CHECK(loaded.data.size() == 3);
  CHECK(loaded.covariate_names ==
        std::vector<std::string>{"site name[say \"hi\"]", "site name[south]"});
  CHECK(loaded.data.covariates(0, 0) == 0.0);
  CHECK(loaded.data.covariates(1, 0) == 1.0);
  CHECK(loaded.data.covariates(2, 1) == 1.0);
}

TEST_CASE("categorical columns expand to reference-coded indicators") {
  const std::string csv = "y,site,arm,x\n1,b,0,0.5\n2,a,1,1.5\n3,c,0,2.5\n4,a,1,3.5\n";
  auto schema = schema_y_arm({"site", "x"});
  schema.categorical = {"site"};
  const auto loaded = read(csv, schema);
  CHECK(loaded.covariate_names == std::vector<std::string>{"site[b]", "site[c]", "x"});
  CHECK(loaded.data.covariates.cols() == 3);
  CHECK(loaded.data.covariates.col(0).sum() == 1.0);
  CHECK(loaded.data.covariates(0, 0) == 1.0);
  CHECK(loaded.data.covariates(2, 1) == 1.0);
  CHECK(loaded.data.covariates(3, 2) == 3.5);

  schema.categorical = {"region"};
  CHECK(error_of([&] { read(csv, schema); }).kind() == ErrorKind::InvalidConfig);
}

TEST_CASE("analysis config parsing") {
  const auto c = parse_analysis_config(kD4Config);
  CHECK(c.columns.outcome == "y");
  REQUIRE(c.models.size() == 1);
  CHECK(c.models[0].label == "gaussian");
  CHECK(c.models[0].spec == ModelSpec::canonical(Family::Gaussian));
  CHECK(c.ci_level == 0.95);
  CHECK_FALSE(c.ci_scale.has_value());

  const auto counts = parse_analysis_config(R"({
    "columns": {"outcome": "y", "treatment": "arm", "followup": "t"},
    "models": [{"label": "NB", "family": "negbin2"}, {"label": "Poisson", "family": "poisson", "offset": "none"}],
    "arms": [1, "placebo"],
    "ci_scale": "identity", "ci_level": 0.9, "vcov_source": "model", "printed_variance": true
  })");
  CHECK(counts.models[0].spec.offset == OffsetRule::LogFollowup);
  CHECK(counts.models[1].spec.offset == OffsetRule::None);
  CHECK(counts.arms == std::vector<std::string>{"1", "placebo"});
  CHECK(counts.ci_scale == CiScale::Identity);
  CHECK(counts.vcov_source == VcovSource::Model);
  CHECK(counts.printed_variance);

  auto bad = [](const std::string& text) { return error_of([&] { parse_analysis_config(text); }).kind(); };
  const std::string cols = R"("columns": {"outcome": "y", "treatment": "arm"})";
  CHECK(bad("{not json") == ErrorKind::InvalidConfig);
  CHECK(bad("{" + cols + R"(, "model": {"family": "gaussian"}, "colour": 1})") == ErrorKind::InvalidConfig);
  CHECK(bad("{" + cols + R"(, "model": {"family": "gamma"}})") == ErrorKind::InvalidConfig);
  CHECK(bad("{" + cols + R"(, "model": {"family": "poisson", "link": "identity"}})") == ErrorKind::InvalidConfig);
  CHECK(bad("{" + cols + R"(, "estimators": ["mu2"]})") == ErrorKind::InvalidConfig);
  CHECK(bad("{" + cols + R"(, "estimators": []})") == ErrorKind::InvalidConfig);
  CHECK(bad("{" + cols + R"(, "schema_version": 2, "estimators": ["mu1"]})") == ErrorKind::InvalidConfig);
  CHECK(bad("{" + cols + R"(, "estimators": ["mu1"], "ci_level": 1.5})") == ErrorKind::InvalidConfig);
  CHECK(bad("{" + cols + R"(, "model": {"family": "gaussian"}, "variance_methods": ["augmented"]})") ==
        ErrorKind::InvalidConfig);
  CHECK(bad(R"({"model": {"family": "gaussian"}})") == ErrorKind::InvalidConfig);
  CHECK(bad("{" + cols + R"(, "models": [{"label": "a", "family": "gaussian"}, {"label": "a", "family": "gaussian"}]})") ==
        ErrorKind::InvalidConfig);
}

TEST_CASE("D4 analysis reproduces the hand values") {
  const auto loaded = read(kD4, schema_y_arm());
  const auto report = analyze(loaded, parse_analysis_config(kD4Config));
  CHECK(report.n == 4);
  // mu1 for two arms, then mu2 fixed and random for two arms
  REQUIRE(report.cells.size() == 6);
  auto cell = [&](Estimator e, VarianceKind k, const std::string& arm) {
    for (const auto& c : report.cells) {
      if (c.estimate.estimator == e && c.estimate.method.kind == k && c.arm_label == arm) return c.estimate;
    }
    FAIL("cell missing");
    return MarginalEstimate{};
  };
  CHECK(cell(Estimator::Mu1, VarianceKind::IidSandwich, "1").estimate == doctest::Approx(4.0));
  CHECK(cell(Estimator::Mu2, VarianceKind::FixedX, "1").estimate == doctest::Approx(4.0));
  CHECK(cell(Estimator::Mu1, VarianceKind::IidSandwich, "0").estimate == doctest::Approx(2.0));
  CHECK(cell(Estimator::Mu2, VarianceKind::RandomX, "0").estimate == doctest::Approx(2.0));
  CHECK(cell(Estimator::Mu2, VarianceKind::RandomX, "1").variance -
            cell(Estimator::Mu2, VarianceKind::FixedX, "1").variance ==
        doctest::Approx(0.5625));
  CHECK(cell(Estimator::Mu2, VarianceKind::FixedX, "1").ci_scale == CiScale::Identity);

  REQUIRE(report.models.size() == 1);
  const auto& coef = report.models[0].coefficients;
  REQUIRE(coef.size() == 3);
  CHECK(coef[0].term == "(Intercept)");
  CHECK(coef[1].term == "x");
  CHECK(coef[2].term == "arm[1]");
  CHECK(coef[0].estimate == doctest::Approx(0.5));
  CHECK(coef[1].estimate == doctest::Approx(3.0));
  CHECK(coef[2].estimate == doctest::Approx(2.0));

  const std::string text = render_report(report, ReportFormat::Text);
  CHECK(text.find("4.000 (") != std::string::npos);
  CHECK(text.find("mu2 gaussian fixed X") != std::string::npos);
  CHECK(text == render_report(analyze(loaded, parse_analysis_config(kD4Config)), ReportFormat::Text));
}

TEST_CASE("rendered formats keep every cell") {
  const auto loaded = read(kD4, schema_y_arm());
  const auto report = analyze(loaded, parse_analysis_config(kD4Config));

  const std::string csv = render_report(report, ReportFormat::Csv);
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 1 + report.cells.size());
  CHECK(csv.rfind("model,estimator,variance_method", 0) == 0);

  const std::string json = render_report(report, ReportFormat::Json);
  const auto back = report_from_json(json);
  CHECK(back == report);
  CHECK(render_report(back, ReportFormat::Json) == json);

  CHECK(parse_report_format("csv") == ReportFormat::Csv);
  CHECK(error_of([] { parse_report_format("xml"); }).kind() == ErrorKind::InvalidConfig);
}

TEST_CASE("count analysis equals direct library calls") {
  auto spec = ScenarioSpec::standard(1, 300);
  const auto data = generate_scenario(spec, RandomizationScheme{}, 3, 0);
  LoadSchema schema;
  schema.outcome = "count";
  schema.treatment = "treat";
  schema.covariates = {"x"};
  schema.followup = "followup";
  schema.treatment_levels = {"control", "active"};
  const auto loaded = read(to_csv(data), schema);
  CHECK(loaded.data.outcome == data.outcome);
  CHECK(loaded.data.followup == data.followup);
  CHECK(loaded.data.arm == data.arm);

  const auto config = parse_analysis_config(R"({
    "columns": {"outcome": "count", "treatment": "treat", "covariates": ["x"], "followup": "followup",
                "treatment_levels": ["control", "active"]},
    "models": [{"label": "NB", "family": "negbin2"}, {"label": "Poisson", "family": "poisson"}]
  })");
  const auto report = analyze(loaded, config);
  // mu1 x 2 arms, then per model (fixed, random, mu3) x 2 arms
  CHECK(report.cells.size() == 2 + 2 * 3 * 2);

  const EstimateOptions log_scale{CiScale::Log, 0.95, false};
  const auto nb = fit(data, ModelSpec::canonical(Family::NegBin2, OffsetRule::LogFollowup));
  const auto pois = fit(data, ModelSpec::canonical(Family::Poisson, OffsetRule::LogFollowup));
  for (const auto& c : report.cells) {
    const auto& e = c.estimate;
    const int z = e.arm;
    if (e.estimator == Estimator::Mu1) {
      CHECK(e == mu1(data, z, log_scale));
      continue;
    }
    const auto& f = c.model == "NB" ? nb : pois;
    if (e.estimator == Estimator::Mu2) {
      CHECK(e == mu2(data, f, z, e.method, log_scale));
    } else {
      CHECK(e == mu3(data, f, z, log_scale));
    }
  }
  REQUIRE(report.models.size() == 2);
  CHECK(report.models[0].dispersion.has_value());
  CHECK(report.models[0].coefficients[2].term == "arm[active]");
  CHECK(report.models[0].coefficients[1].estimate == nb.beta[1]);
  CHECK(report_from_json(render_report(report, ReportFormat::Json)) == report);
}

TEST_CASE("requesting an absent arm names it") {
  const auto loaded = read(kD4, schema_y_arm());
  auto config = parse_analysis_config(kD4Config);
  config.arms = {"1", "7"};
  const auto e = error_of([&] { analyze(loaded, config); });
  CHECK(e.kind() == ErrorKind::EmptyArm);
  CHECK(e.detail().find("'7'") != std::string::npos);

  // "1.0" in the config matches the stored label "1"
  config.arms = {"1.0"};
  CHECK(analyze(loaded, config).cells.front().arm_label == "1");
}

TEST_CASE("fit failures keep their kind and gain the model label") {
  const auto loaded = read("y,x,arm\n0,0,0\n0,1,0\n1,0,1\n1,1,1\n", schema_y_arm());
  const auto config = parse_analysis_config(R"({
    "columns": {"outcome": "y", "treatment": "arm", "covariates": ["x"]},
    "model": {"label": "logit", "family": "binomial"}, "estimators": ["mu2"]
  })");
  const auto e = error_of([&] { analyze(loaded, config); });
  CHECK(e.kind() == ErrorKind::SeparationDetected);
  CHECK(e.detail().find("model 'logit'") != std::string::npos);
  CHECK(exit_code_for(e.kind()) == 3);
}

TEST_CASE("simulation config parsing") {
  const auto c = parse_simulation_config(R"({
    "schema_version": 1, "scenario": [1, 3], "n": 200, "replicates": 50, "seed": 18446744073709551615,
    "randomization": {"kind": "stratified", "block_size": 6, "strata": [0]},
    "estimators": ["mu1", "mu2"], "variance_methods": ["random_x"], "ci_scale": "identity"
  })");
  CHECK(c.scenarios == std::vector<int>{1, 3});
  CHECK(c.n == 200);
  CHECK(c.replicates == 50);
  CHECK(c.seed == 18446744073709551615ull);
  REQUIRE(c.schemes.size() == 1);
  CHECK(c.schemes[0].kind == RandomizationKind::StratifiedPermutedBlock);
  CHECK(c.schemes[0].block_size == 6);
  CHECK(c.mu2_methods == std::vector<VarianceKind>{VarianceKind::RandomX});
  CHECK(c.ci_scale == CiScale::Identity);

  const auto single = parse_simulation_config(R"({"scenario": 2})");
  CHECK(single.scenarios == std::vector<int>{2});
  CHECK(single.replicates == 10000);

  auto bad = [](const std::string& text) { return error_of([&] { parse_simulation_config(text); }).kind(); };
  CHECK(bad(R"({"scenario": "one"})") == ErrorKind::InvalidConfig);
  CHECK(bad(R"({"threads": 4})") == ErrorKind::InvalidConfig);
  CHECK(bad(R"({"randomization": {"kind": "urn"}})") == ErrorKind::InvalidConfig);
  CHECK(bad(R"({"randomization": {"kind": "stratified", "strata": [2]}})") == ErrorKind::InvalidConfig);
}

TEST_CASE("simulation reports render deterministically") {
  auto config = parse_simulation_config(R"({"scenario": [1, 4], "n": 100, "replicates": 12, "seed": 9})");
  config.arms = {0, 1};
  const auto a = simulation_report_json(run_simulation(config, 1));
  const auto b = simulation_report_json(run_simulation(config, 4));
  CHECK(a == b);
  CHECK(a.find("\"schema_version\": 1") != std::string::npos);

  const auto text = simulation_report_text(run_simulation(config, 2));
  CHECK(text.find("Fixed X 95% CI Cov.") != std::string::npos);
  CHECK(text.find("Random X 95% CI Cov.") != std::string::npos);
  CHECK(text.find("Rel. eff.") != std::string::npos);
  CHECK(text.find("randomization permuted_block(4), arm 0") != std::string::npos);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ErrorKind::MissingValue) == 2);
  CHECK(exit_code_for(ErrorKind::InvalidConfig) == 2);
  CHECK(exit_code_for(ErrorKind::EmptyArm) == 2);
  CHECK(exit_code_for(ErrorKind::NonConvergence) == 3);
  CHECK(exit_code_for(ErrorKind::SingularBread) == 3);
}
