#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "mmlmpc/harness.hpp"

using namespace mmlmpc;

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal learning MPC batch simulator"};
  app.require_subcommand(1);

  std::string scenario_file, out_dir = "run", policy_name = "mm", run_dir;
  long long seed_override = -1;
  int max_iters_override = -1;
  bool with_plots = false;

  CLI::App* run = app.add_subcommand("run", "Run a full experiment");
  run->add_option("--scenario", scenario_file, "Scenario config file")->required();
  run->add_option("--policy", policy_name, "mm | baseline")
      ->check(CLI::IsMember({"mm", "baseline"}));
  run->add_option("--out", out_dir, "Run output directory");
  run->add_option("--seed", seed_override, "Override the scenario seed");
  run->add_option("--max-iters", max_iters_override, "Override max controlled iterations");
  run->add_flag("--plots", with_plots, "Emit SVG plots after the run");

  CLI::App* boot = app.add_subcommand("bootstrap", "Run the PID bootstrap laps only");
  boot->add_option("--scenario", scenario_file, "Scenario config file")->required();
  boot->add_option("--out", out_dir, "Run output directory");
  boot->add_option("--seed", seed_override, "Override the scenario seed");

  CLI::App* plot = app.add_subcommand("plot", "Render plots for an existing run directory");
  plot->add_option("--run", run_dir, "Run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      Scenario scn = load_scenario(scenario_file);
      if (seed_override >= 0) scn.seed = static_cast<std::uint64_t>(seed_override);
      if (max_iters_override > 0) scn.max_iterations = max_iters_override;
      const Policy policy = (policy_name == "mm") ? Policy::MultiModal : Policy::Baseline;
      const ExperimentResult result = run_experiment(scn, policy, out_dir);
      if (with_plots) emit_plots(out_dir);

      int completed = 0;
      for (const auto& lap : result.laps)
        if (lap.kind == "ctrl" && lap.completed) ++completed;
      std::cout << "policy=" << policy_name << " controlled_laps_completed=" << completed
                << " converged_at=" << result.converged_at
                << " first_violation=" << result.first_violation << "\n";
      return result.any_violation ? 2 : 0;
    }
    if (boot->parsed()) {
      Scenario scn = load_scenario(scenario_file);
      if (seed_override >= 0) scn.seed = static_cast<std::uint64_t>(seed_override);
      std::filesystem::create_directories(out_dir);
      write_scenario_snapshot(out_dir, scn);
      std::mt19937_64 rng(scn.seed);
      const std::filesystem::path dir = out_dir;
      std::vector<LapMetrics> metrics;
      DataSet ds = run_bootstrap(scn, rng, &dir, &metrics);
      std::cout << "bootstrap_iterations=" << ds.iterations().size() << "\n";
      return 0;
    }
    if (plot->parsed()) {
      emit_plots(run_dir);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
