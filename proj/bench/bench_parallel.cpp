// Serial reference against the OpenMP kernels: replicate loop and truth oracle.
// Usage: bench_parallel [replicates] [threads]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "stdmarg/cli_io.hpp"
#include "stdmarg/trial_sim.hpp"

namespace {

template <typename F>
double seconds(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void row(const char* name, double serial, double parallel, bool identical) {
  std::printf("%-22s %10.3f %10.3f %8.2fx  %s\n", name, serial, parallel, serial / parallel,
              identical ? "identical" : "DIFFERENT");
}

}  // namespace

int main(int argc, char** argv) {
  const int replicates = argc > 1 ? std::atoi(argv[1]) : 400;
  int threads = argc > 2 ? std::atoi(argv[2]) : stdmarg::threads_from_environment();
  if (threads <= 0) threads = 0;

  stdmarg::SimulationConfig config;
  config.scenarios = {1, 2, 3, 4};
  config.replicates = replicates;
  config.seed = 99;

  std::printf("%-22s %10s %10s %9s\n", "kernel", "serial s", "openmp s", "speedup");

  stdmarg::SimulationReport serial_report, parallel_report;
  const double sim_serial = seconds([&] { serial_report = stdmarg::run_simulation_serial(config); });
  const double sim_parallel = seconds([&] { parallel_report = stdmarg::run_simulation(config, threads); });
  row("run_simulation", sim_serial, sim_parallel,
      stdmarg::simulation_report_json(serial_report) == stdmarg::simulation_report_json(parallel_report));

  const auto spec = stdmarg::ScenarioSpec::standard(2);
  const std::size_t draws = 10'000'000;
  stdmarg::OracleMean a, b;
  const double oracle_serial = seconds([&] { a = stdmarg::true_marginal_mean_serial(spec, 1, draws); });
  const double oracle_parallel = seconds([&] { b = stdmarg::true_marginal_mean(spec, 1, draws, 20240601, threads); });
  row("true_marginal_mean", oracle_serial, oracle_parallel, a.estimate == b.estimate && a.mc_se == b.mc_se);
  return 0;
}
