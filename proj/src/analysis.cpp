#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "io_util.hpp"
#include "stdmarg/cli_io.hpp"

namespace stdmarg {

using io::Json;

namespace {

const std::string kWhere = "analysis config";

ModelConfig parse_model(const Json& obj, bool has_followup) {
  io::require_keys(obj, {"label", "family", "link", "offset", "interactions"}, "model");
  ModelConfig m;
  m.spec.family = parse_family(io::get<std::string>(obj, "family", "model"));
  m.spec.link = obj.contains("link") ? parse_link(io::get<std::string>(obj, "link", "model"))
                                     : canonical_link(m.spec.family);
  if (obj.contains("offset")) {
    m.spec.offset = parse_offset_rule(io::get<std::string>(obj, "offset", "model"));
  } else {
    m.spec.offset = has_followup && m.spec.link == Link::Log ? OffsetRule::LogFollowup : OffsetRule::None;
  }
  m.spec.interactions = io::get_or<bool>(obj, "interactions", false, "model");
  m.label = io::get_or<std::string>(obj, "label", std::string(to_string(m.spec.family)), "model");
  try {
    m.spec.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::InvalidConfig, "model '" + m.label + "': " + e.detail());
  }
  return m;
}

std::string arm_text(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.dump();
  throw Error(ErrorKind::InvalidConfig, kWhere + ": arms must be strings or numbers");
}

std::optional<double> as_number(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

int resolve_arm(const std::string& requested, const std::vector<std::string>& labels) {
  for (std::size_t a = 0; a < labels.size(); ++a) {
    if (labels[a] == requested) return static_cast<int>(a);
  }
  // "1" in the config also matches a stored label such as "1.0"
  if (const auto want = as_number(requested)) {
    for (std::size_t a = 0; a < labels.size(); ++a) {
      const auto have = as_number(labels[a]);
      if (have && *have == *want) return static_cast<int>(a);
    }
  }
  throw Error(ErrorKind::EmptyArm, "arm '" + requested + "' is not present in the data");
}

[[noreturn]] void rethrow_with(const Error& e, const std::string& context) {
  throw Error(e.kind(), context + ": " + e.detail());
}

}  // namespace

AnalysisConfig parse_analysis_config(std::string_view json_text) {
  const Json root = io::parse_json(json_text, kWhere);
  io::require_keys(root,
                   {"schema_version", "columns", "model", "models", "arms", "estimators", "variance_methods",
                    "vcov_source", "ci_scale", "ci_level", "printed_variance"},
                   kWhere);
  io::check_schema_version(root, kSchemaVersion, kWhere);

  AnalysisConfig config;
  const Json cols = root.contains("columns") ? root.at("columns") : Json();
  if (!cols.is_object()) throw Error(ErrorKind::InvalidConfig, kWhere + ": 'columns' is required");
  io::require_keys(cols, {"outcome", "treatment", "covariates", "categorical", "followup", "treatment_levels"},
                   "columns");
  auto& schema = config.columns;
  schema.outcome = io::get<std::string>(cols, "outcome", "columns");
  schema.treatment = io::get<std::string>(cols, "treatment", "columns");
  schema.covariates = io::get_or<std::vector<std::string>>(cols, "covariates", {}, "columns");
  schema.categorical = io::get_or<std::vector<std::string>>(cols, "categorical", {}, "columns");
  if (cols.contains("followup")) schema.followup = io::get<std::string>(cols, "followup", "columns");
  schema.treatment_levels = io::get_or<std::vector<std::string>>(cols, "treatment_levels", {}, "columns");

  if (root.contains("model") && root.contains("models")) {
    throw Error(ErrorKind::InvalidConfig, kWhere + ": give either 'model' or 'models', not both");
  }
  if (root.contains("model")) config.models.push_back(parse_model(root.at("model"), schema.followup.has_value()));
  if (root.contains("models")) {
    if (!root.at("models").is_array()) throw Error(ErrorKind::InvalidConfig, kWhere + ": 'models' must be a list");
    for (const auto& m : root.at("models")) config.models.push_back(parse_model(m, schema.followup.has_value()));
  }
  for (std::size_t i = 0; i < config.models.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (config.models[i].label == config.models[j].label) {
        throw Error(ErrorKind::InvalidConfig, "model label '" + config.models[i].label + "' is used twice");
      }
    }
  }

  if (root.contains("arms")) {
    if (!root.at("arms").is_array()) throw Error(ErrorKind::InvalidConfig, kWhere + ": 'arms' must be a list");
    for (const auto& a : root.at("arms")) config.arms.push_back(arm_text(a));
  }
  if (root.contains("estimators")) {
    config.estimators.clear();
    for (const auto& e : io::get<std::vector<std::string>>(root, "estimators", kWhere)) {
      config.estimators.push_back(parse_estimator(e));
    }
  }
  if (config.estimators.empty()) throw Error(ErrorKind::InvalidConfig, kWhere + ": no estimators requested");
  if (root.contains("variance_methods")) {
    config.variance_methods.clear();
    for (const auto& v : io::get<std::vector<std::string>>(root, "variance_methods", kWhere)) {
      const auto kind = parse_variance_kind(v);
      if (kind != VarianceKind::FixedX && kind != VarianceKind::RandomX && kind != VarianceKind::FullInfluence) {
        throw Error(ErrorKind::InvalidConfig, kWhere + ": '" + v + "' is not a variance method for mu2");
      }
      config.variance_methods.push_back(kind);
    }
  }
  const bool wants_model = std::any_of(config.estimators.begin(), config.estimators.end(),
                                       [](Estimator e) { return e != Estimator::Mu1; });
  if (wants_model && config.models.empty()) {
    throw Error(ErrorKind::InvalidConfig, kWhere + ": mu2 and mu3 need at least one model");
  }
  const bool wants_mu2 = std::find(config.estimators.begin(), config.estimators.end(), Estimator::Mu2) !=
                         config.estimators.end();
  if (wants_mu2 && config.variance_methods.empty()) {
    throw Error(ErrorKind::InvalidConfig, kWhere + ": mu2 needs at least one variance method");
  }
  if (root.contains("vcov_source")) {
    config.vcov_source = parse_vcov_source(io::get<std::string>(root, "vcov_source", kWhere));
  }
  if (root.contains("ci_scale")) config.ci_scale = parse_ci_scale(io::get<std::string>(root, "ci_scale", kWhere));
  config.ci_level = io::get_or<double>(root, "ci_level", 0.95, kWhere);
  if (!(config.ci_level > 0.0 && config.ci_level < 1.0)) {
    throw Error(ErrorKind::InvalidConfig, kWhere + ": ci_level must lie in (0, 1)");
  }
  config.printed_variance = io::get_or<bool>(root, "printed_variance", false, kWhere);
  return config;
}

AnalysisConfig load_analysis_config(const std::string& path) {
  return parse_analysis_config(io::read_file(path));
}

AnalysisReport analyze(const LoadedDataset& dataset, const AnalysisConfig& config) {
  const TrialDataset& data = dataset.data;
  AnalysisReport report;
  report.n = data.size();
  report.arm_labels = dataset.arm_labels;

  std::vector<int> arms;
  if (config.arms.empty()) {
    for (int a = 0; a < data.num_arms; ++a) arms.push_back(a);
  } else {
    for (const auto& label : config.arms) arms.push_back(resolve_arm(label, dataset.arm_labels));
  }
  for (int a : arms) {
    if (data.arm_count(a) == 0) {
      throw Error(ErrorKind::EmptyArm, "arm '" + dataset.arm_labels[static_cast<std::size_t>(a)] + "' has no rows");
    }
  }

  auto options_for = [&](std::optional<Family> family) {
    EstimateOptions o;
    if (config.ci_scale) {
      o.ci_scale = *config.ci_scale;
    } else if (family) {
      o.ci_scale = default_ci_scale(*family);
    } else {
      o.ci_scale = data.unit_followup() ? CiScale::Identity : CiScale::Log;
    }
    o.ci_level = config.ci_level;
    o.printed_variance = config.printed_variance;
    return o;
  };
  auto label_of = [&](int a) { return dataset.arm_labels[static_cast<std::size_t>(a)]; };

  if (std::find(config.estimators.begin(), config.estimators.end(), Estimator::Mu1) != config.estimators.end()) {
    const auto options = options_for(config.models.empty() ? std::nullopt
                                                            : std::optional<Family>(config.models[0].spec.family));
    for (int a : arms) {
      try {
        report.cells.push_back({"", label_of(a), mu1(data, a, options)});
      } catch (const Error& e) {
        rethrow_with(e, "mu1, arm '" + label_of(a) + "'");
      }
    }
  }

  const bool wants_mu2 = std::find(config.estimators.begin(), config.estimators.end(), Estimator::Mu2) !=
                         config.estimators.end();
  const bool wants_mu3 = std::find(config.estimators.begin(), config.estimators.end(), Estimator::Mu3) !=
                         config.estimators.end();
  if (!wants_mu2 && !wants_mu3) return report;

  for (const auto& model : config.models) {
    FitResult f;
    try {
      f = fit(data, model.spec);
    } catch (const Error& e) {
      rethrow_with(e, "model '" + model.label + "'");
    }

    ModelDiagnostics diag;
    diag.label = model.label;
    diag.spec = model.spec;
    diag.converged = f.converged;
    diag.iterations = f.iterations;
    diag.loglik = f.loglik;
    diag.dispersion = f.dispersion;
    diag.effectively_poisson = f.effectively_poisson;
    const auto names = f.layout.column_names(dataset.covariate_names, dataset.arm_labels);
    for (Eigen::Index j = 0; j < f.beta.size(); ++j) {
      diag.coefficients.push_back({names[static_cast<std::size_t>(j)], f.beta[j], std::sqrt(f.vcov_sandwich(j, j)),
                                   std::sqrt(f.vcov_model(j, j))});
    }
    report.models.push_back(std::move(diag));

    const auto options = options_for(model.spec.family);
    if (wants_mu2) {
      for (auto kind : config.variance_methods) {
        for (int a : arms) {
          try {
            report.cells.push_back({model.label, label_of(a), mu2(data, f, a, {kind, config.vcov_source}, options)});
          } catch (const Error& e) {
            rethrow_with(e, "model '" + model.label + "', mu2 " + std::string(to_string(kind)) + ", arm '" +
                                label_of(a) + "'");
          }
        }
      }
    }
    if (wants_mu3) {
      for (int a : arms) {
        try {
          report.cells.push_back({model.label, label_of(a), mu3(data, f, a, options)});
        } catch (const Error& e) {
          rethrow_with(e, "model '" + model.label + "', mu3, arm '" + label_of(a) + "'");
        }
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Rendering

ReportFormat parse_report_format(std::string_view name) {
  if (name == "text") return ReportFormat::Text;
  if (name == "csv") return ReportFormat::Csv;
  if (name == "json") return ReportFormat::Json;
  throw Error(ErrorKind::InvalidConfig, "unknown output format '" + std::string(name) + "'");
}

namespace {

std::string describe_row(const ReportCell& cell) {
  const auto& e = cell.estimate;
  std::string s(to_string(e.estimator));
  if (!cell.model.empty()) s += " " + cell.model;
  if (e.estimator == Estimator::Mu2) {
    s += e.method.kind == VarianceKind::FixedX     ? " fixed X"
         : e.method.kind == VarianceKind::RandomX ? " random X"
                                                  : " full influence";
  }
  return s;
}

std::string render_text(const AnalysisReport& report) {
  std::string out = "n = " + std::to_string(report.n) + "\narms:";
  for (std::size_t a = 0; a < report.arm_labels.size(); ++a) {
    out += std::string(a == 0 ? " " : ", ") + std::to_string(a) + " = " + report.arm_labels[a];
  }
  out += "\n";

  for (const auto& m : report.models) {
    out += "\nmodel " + m.label + ": " + std::string(to_string(m.spec.family)) + ", " +
           std::string(to_string(m.spec.link)) + " link";
    if (m.spec.offset == OffsetRule::LogFollowup) out += ", log follow-up offset";
    if (m.spec.interactions) out += ", arm interactions";
    out += "\n  " + std::string(m.converged ? "converged" : "not converged") + " in " +
           std::to_string(m.iterations) + " iterations, log-likelihood " + io::fixed(m.loglik, 3);
    if (m.dispersion) {
      out += ", dispersion " + io::fixed(*m.dispersion, 4);
      if (m.effectively_poisson) out += " (effectively Poisson)";
    }
    out += "\n";
    std::vector<std::vector<std::string>> rows{{"  term", "estimate", "sandwich SE", "model SE"}};
    for (const auto& c : m.coefficients) {
      rows.push_back({"  " + c.term, io::fixed(c.estimate, 4), io::fixed(c.sandwich_se, 4), io::fixed(c.model_se, 4)});
    }
    out += io::align(rows);
  }

  if (report.cells.empty()) return out;
  // one row per (estimator, model, method), one column per reported arm
  std::vector<std::string> arms;
  std::vector<std::string> row_keys;
  std::vector<std::vector<std::string>> grid;
  for (const auto& cell : report.cells) {
    if (std::find(arms.begin(), arms.end(), cell.arm_label) == arms.end()) arms.push_back(cell.arm_label);
  }
  for (const auto& cell : report.cells) {
    const std::string key = describe_row(cell);
    auto it = std::find(row_keys.begin(), row_keys.end(), key);
    if (it == row_keys.end()) {
      row_keys.push_back(key);
      grid.emplace_back(arms.size());
      it = row_keys.end() - 1;
    }
    const auto r = static_cast<std::size_t>(it - row_keys.begin());
    const auto c = static_cast<std::size_t>(std::find(arms.begin(), arms.end(), cell.arm_label) - arms.begin());
    const auto& e = cell.estimate;
    grid[r][c] = io::fixed(e.estimate, 3) + " (" + io::fixed(e.ci_low, 3) + ", " + io::fixed(e.ci_high, 3) + ")";
  }
  const auto& first = report.cells.front().estimate;
  out += "\nmarginal means with " + io::fixed(100.0 * first.ci_level, 0) + "% confidence intervals\n";
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"estimator"};
  for (const auto& a : arms) header.push_back(a);
  rows.push_back(header);
  for (std::size_t r = 0; r < row_keys.size(); ++r) {
    std::vector<std::string> line{row_keys[r]};
    for (const auto& v : grid[r]) line.push_back(v.empty() ? "-" : v);
    rows.push_back(line);
  }
  out += io::align(rows);
  return out;
}

std::string render_csv(const AnalysisReport& report) {
  std::string out =
      "model,estimator,variance_method,vcov_source,arm,estimate,variance,se,ci_low,ci_high,ci_scale,ci_level,n_used\n";
  for (const auto& cell : report.cells) {
    const auto& e = cell.estimate;
    out += io::csv_field(cell.model) + "," + std::string(to_string(e.estimator)) + "," +
           std::string(to_string(e.method.kind)) + "," + std::string(to_string(e.method.vcov)) + "," +
           io::csv_field(cell.arm_label) + "," + io::exact(e.estimate) + "," + io::exact(e.variance) + "," +
           io::exact(e.se()) + "," + io::exact(e.ci_low) + "," + io::exact(e.ci_high) + "," +
           std::string(to_string(e.ci_scale)) + "," + io::exact(e.ci_level) + "," + std::to_string(e.n_used) + "\n";
  }
  return out;
}

Json model_json(const ModelDiagnostics& m) {
  Json j;
  j["label"] = m.label;
  j["family"] = to_string(m.spec.family);
  j["link"] = to_string(m.spec.link);
  j["offset"] = to_string(m.spec.offset);
  j["interactions"] = m.spec.interactions;
  j["converged"] = m.converged;
  j["iterations"] = m.iterations;
  j["loglik"] = m.loglik;
  j["dispersion"] = m.dispersion ? Json(*m.dispersion) : Json(nullptr);
  j["effectively_poisson"] = m.effectively_poisson;
  j["coefficients"] = Json::array();
  for (const auto& c : m.coefficients) {
    j["coefficients"].push_back(
        {{"term", c.term}, {"estimate", c.estimate}, {"sandwich_se", c.sandwich_se}, {"model_se", c.model_se}});
  }
  return j;
}

Json cell_json(const ReportCell& cell) {
  const auto& e = cell.estimate;
  Json j;
  j["model"] = cell.model;
  j["arm"] = e.arm;
  j["arm_label"] = cell.arm_label;
  j["estimator"] = to_string(e.estimator);
  j["variance_method"] = to_string(e.method.kind);
  j["vcov_source"] = to_string(e.method.vcov);
  j["estimate"] = e.estimate;
  j["variance"] = e.variance;
  j["se"] = e.se();
  j["ci_low"] = e.ci_low;
  j["ci_high"] = e.ci_high;
  j["ci_scale"] = to_string(e.ci_scale);
  j["ci_level"] = e.ci_level;
  j["n_used"] = e.n_used;
  return j;
}

}  // namespace

std::string render_report(const AnalysisReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::Text: return render_text(report);
    case ReportFormat::Csv: return render_csv(report);
    case ReportFormat::Json: break;
  }
  Json j;
  j["schema_version"] = report.schema_version;
  j["n"] = report.n;
  j["arm_labels"] = report.arm_labels;
  j["models"] = Json::array();
  for (const auto& m : report.models) j["models"].push_back(model_json(m));
  j["cells"] = Json::array();
  for (const auto& c : report.cells) j["cells"].push_back(cell_json(c));
  return j.dump(2) + "\n";
}

AnalysisReport report_from_json(std::string_view json_text) {
  const Json j = io::parse_json(json_text, "report");
  const std::string where = "report";
  io::check_schema_version(j, kSchemaVersion, where);
  AnalysisReport r;
  try {
    r.schema_version = j.at("schema_version").get<int>();
    r.n = j.at("n").get<std::size_t>();
    r.arm_labels = j.at("arm_labels").get<std::vector<std::string>>();
    for (const auto& m : j.at("models")) {
      ModelDiagnostics d;
      d.label = m.at("label").get<std::string>();
      d.spec.family = parse_family(m.at("family").get<std::string>());
      d.spec.link = parse_link(m.at("link").get<std::string>());
      d.spec.offset = parse_offset_rule(m.at("offset").get<std::string>());
      d.spec.interactions = m.at("interactions").get<bool>();
      d.converged = m.at("converged").get<bool>();
      d.iterations = m.at("iterations").get<int>();
      d.loglik = m.at("loglik").get<double>();
      if (!m.at("dispersion").is_null()) d.dispersion = m.at("dispersion").get<double>();
      d.effectively_poisson = m.at("effectively_poisson").get<bool>();
      for (const auto& c : m.at("coefficients")) {
        d.coefficients.push_back({c.at("term").get<std::string>(), c.at("estimate").get<double>(),
                                  c.at("sandwich_se").get<double>(), c.at("model_se").get<double>()});
      }
      r.models.push_back(std::move(d));
    }
    for (const auto& c : j.at("cells")) {
      ReportCell cell;
      cell.model = c.at("model").get<std::string>();
      cell.arm_label = c.at("arm_label").get<std::string>();
      auto& e = cell.estimate;
      e.arm = c.at("arm").get<int>();
      e.estimator = parse_estimator(c.at("estimator").get<std::string>());
      e.method = {parse_variance_kind(c.at("variance_method").get<std::string>()),
                  parse_vcov_source(c.at("vcov_source").get<std::string>())};
      e.estimate = c.at("estimate").get<double>();
      e.variance = c.at("variance").get<double>();
      e.ci_low = c.at("ci_low").get<double>();
      e.ci_high = c.at("ci_high").get<double>();
      e.ci_scale = parse_ci_scale(c.at("ci_scale").get<std::string>());
      e.ci_level = c.at("ci_level").get<double>();
      e.n_used = c.at("n_used").get<std::size_t>();
      r.cells.push_back(std::move(cell));
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, where + ": " + e.what());
  }
  return r;
}

int exit_code_for(ErrorKind kind) noexcept { return is_convergence_error(kind) ? 3 : 2; }

}  // namespace stdmarg
