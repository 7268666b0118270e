#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "stdmarg/cli_io.hpp"

namespace {

int run_analyze(const std::string& data_path, const std::string& config_path, const std::string& format) {
  const auto fmt = stdmarg::parse_report_format(format);
  const auto config = stdmarg::load_analysis_config(config_path);
  const auto data = stdmarg::load_dataset(data_path, config.columns);
  std::cout << stdmarg::render_report(stdmarg::analyze(data, config), fmt);
  return 0;
}

int run_simulate(const std::string& config_path, int threads, const std::string& format) {
  const auto config = stdmarg::load_simulation_config(config_path);
  if (threads <= 0) threads = stdmarg::threads_from_environment();
  const auto report = stdmarg::run_simulation(config, threads);
  if (format == "json") {
    std::cout << stdmarg::simulation_report_json(report);
  } else if (format == "text") {
    std::cout << stdmarg::simulation_report_text(report);
  } else {
    throw stdmarg::Error(stdmarg::ErrorKind::InvalidConfig, "simulate writes json or text, not '" + format + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Marginal mean estimation for randomized trials"};
  app.require_subcommand(1);

  std::string data_path, config_path, format = "text";
  auto* analyze = app.add_subcommand("analyze", "Estimate marginal means from a trial dataset");
  analyze->add_option("--data", data_path, "CSV file with a header row")->required();
  analyze->add_option("--config", config_path, "JSON analysis config")->required();
  analyze->add_option("--out", format, "Output format: text, csv or json")->capture_default_str();

  std::string sim_config;
  std::string sim_format = "json";
  int threads = 0;
  auto* simulate = app.add_subcommand("simulate", "Run the Monte Carlo study");
  simulate->add_option("--config", sim_config, "JSON simulation config")->required();
  simulate->add_option("--threads", threads, "Worker threads (default: STDMARG_THREADS, then OpenMP)");
  simulate->add_option("--out", sim_format, "Output format: json or text")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (analyze->parsed()) return run_analyze(data_path, config_path, format);
    return run_simulate(sim_config, threads, sim_format);
  } catch (const stdmarg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return stdmarg::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
