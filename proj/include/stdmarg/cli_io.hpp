#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stdmarg/dataset.hpp"
#include "stdmarg/errors.hpp"
#include "stdmarg/glm.hpp"
#include "stdmarg/marginal.hpp"
#include "stdmarg/trial_sim.hpp"

namespace stdmarg {

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Dataset ingestion

struct LoadSchema {
  std::string outcome;
  std::string treatment;
  std::vector<std::string> covariates;
  /// Subset of `covariates` expanded to reference-coded indicators.
  std::vector<std::string> categorical;
  std::optional<std::string> followup;
  /// Explicit arm order; empty means numeric order when every label is a
  /// number and lexicographic order otherwise.
  std::vector<std::string> treatment_levels;
};

struct LoadedDataset {
  TrialDataset data;
  /// arm_labels[z] is the treatment value coded as arm z.
  std::vector<std::string> arm_labels;
  /// One name per design covariate column, e.g. "site[B]" for indicators.
  std::vector<std::string> covariate_names;
};

/// Parses RFC 4180 style CSV with a header row. Empty cells and "NA" are
/// missing values, which are rejected rather than dropped.
LoadedDataset read_dataset(std::istream& in, const LoadSchema& schema);
LoadedDataset load_dataset(const std::string& path, const LoadSchema& schema);

// ---------------------------------------------------------------------------
// Analysis

struct ModelConfig {
  std::string label;
  ModelSpec spec;
};

struct AnalysisConfig {
  LoadSchema columns;
  std::vector<ModelConfig> models;
  /// Arm labels to report; empty reports every arm.
  std::vector<std::string> arms;
  std::vector<Estimator> estimators{Estimator::Mu1, Estimator::Mu2, Estimator::Mu3};
  /// Variance flavours for mu2.
  std::vector<VarianceKind> variance_methods{VarianceKind::FixedX, VarianceKind::RandomX};
  VcovSource vcov_source = VcovSource::Sandwich;
  /// Unset picks the log scale for count families and identity otherwise.
  std::optional<CiScale> ci_scale;
  double ci_level = 0.95;
  bool printed_variance = false;
};

/// Parses and validates a JSON analysis config. Throws InvalidConfig.
AnalysisConfig parse_analysis_config(std::string_view json_text);
AnalysisConfig load_analysis_config(const std::string& path);

struct CoefficientRow {
  std::string term;
  double estimate = 0.0;
  double sandwich_se = 0.0;
  double model_se = 0.0;

  friend bool operator==(const CoefficientRow&, const CoefficientRow&) = default;
};

struct ModelDiagnostics {
  std::string label;
  ModelSpec spec;
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;
  std::optional<double> dispersion;
  bool effectively_poisson = false;
  std::vector<CoefficientRow> coefficients;

  friend bool operator==(const ModelDiagnostics&, const ModelDiagnostics&) = default;
};

struct ReportCell {
  /// Empty for mu1, which uses no model.
  std::string model;
  std::string arm_label;
  MarginalEstimate estimate;

  friend bool operator==(const ReportCell&, const ReportCell&) = default;
};

struct AnalysisReport {
  int schema_version = kSchemaVersion;
  std::size_t n = 0;
  std::vector<std::string> arm_labels;
  std::vector<ModelDiagnostics> models;
  std::vector<ReportCell> cells;

  friend bool operator==(const AnalysisReport&, const AnalysisReport&) = default;
};

/// Fits every configured model once and fills one cell per requested
/// (estimator, model, variance method, arm). Errors keep their kind and gain
/// the offending model and arm in the message.
AnalysisReport analyze(const LoadedDataset& dataset, const AnalysisConfig& config);

enum class ReportFormat { Text, Csv, Json };

ReportFormat parse_report_format(std::string_view name);

/// text: aligned "estimate (low, high)" grid at 3 decimals; csv and json keep
/// every number at full round-trip precision.
std::string render_report(const AnalysisReport& report, ReportFormat format);

AnalysisReport report_from_json(std::string_view json_text);

// ---------------------------------------------------------------------------
// Simulation

SimulationConfig parse_simulation_config(std::string_view json_text);
SimulationConfig load_simulation_config(const std::string& path);

std::string simulation_report_json(const SimulationReport& report);
/// One block per (randomization, arm) with the simulation table row labels.
std::string simulation_report_text(const SimulationReport& report);

// ---------------------------------------------------------------------------

/// Process exit status for an error: 3 for convergence failures, 2 otherwise.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace stdmarg
