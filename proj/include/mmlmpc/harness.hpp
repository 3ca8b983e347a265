#pragma once

#include <map>
#include <random>

#include "mmlmpc/scenario.hpp"

namespace mmlmpc {

/// Per-lap summary row. Deterministic fields go to metrics.csv; the
/// wall-clock solve time is written to timing.csv so reruns of the same
/// scenario+seed produce byte-identical metrics.
struct LapMetrics {
  std::string kind = "ctrl";  // "pid" (bootstrap) or "ctrl"
  std::string policy;         // "baseline" | "mm" | "pid"
  int iter = 0;               // global iteration id (bootstrap laps included)
  int controlled_index = -1;  // index among controlled laps, -1 for bootstrap
  int steps = 0;
  double lap_time_s = 0.0;    // fractional line-crossing time; NaN if incomplete
  bool completed = false;
  bool constraint_violated = false;
  int safety_steps = 0;
  int gate_failures = 0;
  int qp_fallbacks = 0;
  int degenerate_fallbacks = 0;
  double max_kkt = 0.0;
  double max_ss_residual = 0.0;
  double min_lambda = 0.0;
  double max_lambda_sum_err = 0.0;
  bool provenance_ok = true;
  double mean_qp_iters = 0.0;
  std::map<int, int> selected_hist;
  double mean_solve_ms = 0.0;
};

struct ExperimentResult {
  std::vector<LapMetrics> laps;
  int converged_at = -1;        // controlled-lap index where the 3-lap rule first held
  int first_violation = -1;     // controlled-lap index of the first violated lap
  bool any_violation = false;
};

/// PID bootstrap: laps_per_mode centerline-following laps per bootstrap mode,
/// post-hoc ATV fits from each lap's own data, feasible laps inserted.
/// Throws BootstrapFailure if a PID lap breaks constraints. When writer
/// metrics/laps are wanted, pass a non-null vector to collect them and a run
/// directory to persist iteration files.
DataSet run_bootstrap(const Scenario& scn, std::mt19937_64& rng,
                      const std::filesystem::path* run_dir = nullptr,
                      std::vector<LapMetrics>* metrics = nullptr);

/// Full experiment: bootstrap, then controlled laps under the friction
/// schedule until convergence (3 consecutive laps within epsilon, once no
/// schedule change is pending) or max_iterations. Writes metrics.csv,
/// timing.csv, iter_<k>.json, steps_<k>.csv into out_dir.
ExperimentResult run_experiment(const Scenario& scn, Policy policy,
                                const std::filesystem::path& out_dir);

/// Front/rear slip angles along a trajectory.
std::vector<SlipAngles> compute_slip_angles(std::span<const VehicleState> states,
                                            std::span<const ControlInput> inputs,
                                            const VehicleParams& params);

/// Static SVG plots from a persisted run directory.
void emit_plots(const std::filesystem::path& run_dir);

}  // namespace mmlmpc
