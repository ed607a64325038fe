// safl: simulator and verification harness for server-assisted federated
// averaging under incomplete client participation.
//
// Subcommands: run, sweep, impossibility, pac, report. All randomness flows
// from --seed values in configs or flags; nothing reads the clock or OS
// entropy.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "safl/config.hpp"
#include "safl/errors.hpp"
#include "safl/harness.hpp"
#include "safl/learnability.hpp"
#include "safl/report.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

safl::Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  if (!std::filesystem::exists(path)) {
    throw safl::config_error("config file not found: " + path);
  }
  safl::Config cfg = safl::Config::parse_file(path);
  for (const auto& o : overrides) cfg.apply_override(o);
  safl::validate_config(cfg);
  return cfg;
}

int run_or_sweep(const std::string& config_path, const std::vector<std::string>& overrides,
                 const std::string& out_dir, long long seed_flag, int workers, bool single_run) {
  safl::Config cfg = load_config(config_path, overrides);
  if (seed_flag >= 0) cfg.apply_override("run.seeds=" + std::to_string(seed_flag));
  const auto scenario = safl::scenario_from_string(cfg.get_string("scenario", "name"));
  const auto cells = safl::expand_cells(cfg, scenario);
  if (single_run && cells.size() > 1) {
    throw safl::config_error("config expands to " + std::to_string(cells.size()) +
                             " sweep cells; use the sweep subcommand or fix the axes");
  }
  const auto outcome = safl::run_experiment(cfg, out_dir, workers);
  std::cout << "scenario " << safl::to_string(scenario) << ": " << outcome.cell_keys.size()
            << " cell(s) written to " << outcome.out_dir.string() << "\n";
  for (const auto& key : outcome.cell_keys) std::cout << "  cells/" << key << "\n";
  if (outcome.any_diverged) {
    std::cerr << "warning: at least one run diverged\n";
    return kExitDivergence;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SA-FL simulator and verification harness"};
  app.name("safl");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // run / sweep
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "out";
  long long seed_flag = -1;
  int workers = 1;

  auto* run_cmd = app.add_subcommand("run", "Run a single-cell experiment from a config file");
  run_cmd->add_option("--config", config_path, "Config file path")->required();
  run_cmd->add_option("--set", overrides, "Override entries as section.key=value");
  run_cmd->add_option("--out", out_dir, "Output directory");
  run_cmd->add_option("--seed", seed_flag, "Replace run.seeds with a single seed");

  auto* sweep_cmd = app.add_subcommand("sweep", "Run every sweep cell of a config file");
  sweep_cmd->add_option("--config", config_path, "Config file path")->required();
  sweep_cmd->add_option("--set", overrides, "Override entries as section.key=value");
  sweep_cmd->add_option("--out", out_dir, "Output directory");
  sweep_cmd->add_option("--seed", seed_flag, "Replace run.seeds with a single seed");
  sweep_cmd->add_option("--workers", workers, "Worker threads for sweep cells");

  // impossibility
  double omega = 0.5;
  int clients = 10;
  int samples = 20;
  int trials = 10000;
  long long imp_seed = 0;
  auto* imp_cmd = app.add_subcommand(
      "impossibility", "Monte-Carlo worst-case failure rate under incomplete participation");
  imp_cmd->add_option("--omega", omega, "System capacity m/M in (0,1)");
  imp_cmd->add_option("--clients", clients, "Number of clients M");
  imp_cmd->add_option("--samples-per-client", samples, "Samples per client n");
  imp_cmd->add_option("--trials", trials, "Monte-Carlo trials");
  imp_cmd->add_option("--seed", imp_seed, "Base seed");

  // pac
  double pac_a = 0.0, pac_b = 1.0, pac_ai = 0.2, pac_bi = 0.7, pac_t = 0.5, pac_frac = 0.1;
  int pac_trials = 200;
  long long pac_seed = 0;
  std::vector<long long> pac_grid = {100, 1000, 10000, 100000};
  auto* pac_cmd = app.add_subcommand(
      "pac", "Threshold-class generalization rate experiment for the SA-FL mixture");
  pac_cmd->add_option("--a", pac_a, "Left end of the target support");
  pac_cmd->add_option("--b", pac_b, "Right end of the target support");
  pac_cmd->add_option("--a-inner", pac_ai, "Left end of the participating-data support");
  pac_cmd->add_option("--b-inner", pac_bi, "Right end of the participating-data support");
  pac_cmd->add_option("--t-star", pac_t, "Target threshold");
  pac_cmd->add_option("--n-t-fraction", pac_frac, "Fraction of each sample drawn from the target");
  pac_cmd->add_option("--grid", pac_grid, "Sample-size grid");
  pac_cmd->add_option("--trials", pac_trials, "Trials per grid point");
  pac_cmd->add_option("--seed", pac_seed, "Base seed");

  // report
  std::string report_dir;
  auto* report_cmd =
      app.add_subcommand("report", "Recompute summaries and checks from an output directory");
  report_cmd->add_option("dir", report_dir, "Experiment output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run_cmd->parsed()) {
      return run_or_sweep(config_path, overrides, out_dir, seed_flag, 1, true);
    }
    if (sweep_cmd->parsed()) {
      return run_or_sweep(config_path, overrides, out_dir, seed_flag, workers, false);
    }
    if (imp_cmd->parsed()) {
      safl::ImpossibilityInstance inst;
      inst.omega = omega;
      inst.clients = clients;
      inst.samples_per_client = samples;
      inst.trials = trials;
      const auto res = safl::impossibility_failure_rate(inst, static_cast<std::uint64_t>(imp_seed));
      std::printf("omega %.4g  M %d  n %d  trials %d\n", omega, clients, samples, trials);
      std::printf("risk threshold (1-omega)/8 = %.6g\n", inst.epsilon());
      std::printf("failure rate %.6g  (95%% Wilson [%.6g, %.6g])\n", res.failure_rate,
                  res.wilson.lo, res.wilson.hi);
      std::printf("mean risk %.6g  rare-count rate %.6g\n", res.mean_risk, res.chernoff_rate);
      return kExitOk;
    }
    if (pac_cmd->parsed()) {
      const long long n0 = pac_grid.front();
      const long long nt0 = std::max<long long>(1, std::llround(pac_frac * static_cast<double>(n0)));
      auto inst = safl::ThresholdInstance::safl(pac_a, pac_b, pac_ai, pac_bi, pac_t, nt0, n0 - nt0);
      const auto res = safl::pac_rate_experiment(inst, pac_grid, pac_trials, static_cast<std::uint64_t>(pac_seed));
      std::printf("n        mean excess error\n");
      for (std::size_t i = 0; i < res.all_grid.size(); ++i) {
        std::printf("%-8lld %.6g\n", static_cast<long long>(res.all_grid[i]), res.all_mean_excess[i]);
      }
      std::printf("log-log slope %.4f (intercept %.4f, r2 %.4f)\n", res.fit.slope,
                  res.fit.intercept, res.fit.r2);
      return kExitOk;
    }
    if (report_cmd->parsed()) {
      const safl::Report rep = safl::report_experiment(report_dir);
      safl::print_report(rep, std::cout);
      return rep.all_passed() ? kExitOk : kExitFailure;
    }
  } catch (const safl::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const safl::data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const safl::divergence_error& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
