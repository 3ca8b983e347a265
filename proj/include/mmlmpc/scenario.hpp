#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmlmpc/ftocp.hpp"

namespace mmlmpc {

/// Friction map described in scenario units (regions as [s_start, s_end, mu]).
struct FrictionMapSpec {
  double default_mu = 0.9;
  std::vector<FrictionRegion> regions;

  FrictionMap build(double track_length) const { return {regions, default_mu, track_length}; }
};

struct BootstrapConfig {
  int laps_per_mode = 3;
  std::vector<FrictionMapSpec> modes;
  double v_ref = 1.2;
  double k_v = 1.5;       // speed P gain
  double k_ey = 0.9;      // lateral PD gains
  double k_epsi = 1.2;
  double dither_a = 0.1;       // input excitation noise (std dev)
  double dither_delta = 0.02;
  double v_ref_jitter = 0.05;  // per-lap relative target-speed jitter
};

/// Full experiment description: plant, schedule, bootstrap, controller.
struct Scenario {
  std::string name = "scenario";
  Track track{{{1.0, 0.0}}, 0.4};
  VehicleParams params;
  VehicleState start_state{1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  std::vector<std::pair<int, FrictionMapSpec>> friction_schedule;  // controlled-lap index -> map
  BootstrapConfig bootstrap;
  ControllerConfig controller;
  int max_iterations = 40;
  double convergence_epsilon = 0.05;  // seconds, over 3 consecutive laps
  int max_steps_per_lap = 600;
  std::uint64_t seed = 1;
  bool dump_horizon = false;

  /// Map in force for controlled lap k (largest schedule index <= k).
  FrictionMap map_for_iteration(int k) const;
  void validate() const;
};

Scenario load_scenario(const std::filesystem::path& path);

/// Writes the geometry/schedule snapshot emit_plots needs into run_dir.
void write_scenario_snapshot(const std::filesystem::path& run_dir, const Scenario& scn);

}  // namespace mmlmpc
