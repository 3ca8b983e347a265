#pragma once

#include <map>
#include <span>
#include <vector>

#include "mmlmpc/datastore.hpp"
#include "mmlmpc/qp.hpp"
#include "mmlmpc/sysid.hpp"

namespace mmlmpc {

/// Shifted previous optimal solution used as candidate plan.
struct CandidatePlan {
  std::vector<VehicleState> states;  // length N+1
  std::vector<ControlInput> inputs;  // length N
};

struct SimilarityEntry {
  int iter_id = 0;
  double distance = 0.0;
};

/// Outcome of the mode-similarity iteration selection.
struct SimilarityReport {
  std::map<int, std::vector<VehicleState>> propagated;  // per-iteration trajectories
  std::vector<SimilarityEntry> all;                     // sorted by (distance, id)
  std::vector<int> selected;                            // N_SS ids, same order as ranking
  double delta = 0.0;
  bool gate_passed = false;
};

/// Rolls the ATV model forward from x0 under the candidate inputs.
std::vector<VehicleState> propagate_current(const AtvModel& atv, const VehicleState& x0,
                                            std::span<const ControlInput> inputs);

/// Rolls a stored iteration's per-step models forward from x0, starting at
/// stored time index t_star; model indices wrap modulo the stored lap.
std::vector<VehicleState> propagate_stored(const IterationRecord& rec, const VehicleState& x0,
                                           std::span<const ControlInput> inputs, int t_star);

/// Ranks stored iterations by summed L1 distance between the current
/// predicted trajectory and theirs; selects the N_SS closest (ties toward
/// the lower iteration id) and evaluates the gate against delta.
SimilarityReport select_iterations(const std::vector<VehicleState>& current,
                                   std::map<int, std::vector<VehicleState>> stored_trajs,
                                   int n_ss, double delta);

/// True iff every selected distance is strictly below delta.
bool similarity_gate(const SimilarityReport& report, double delta);

/// Safe-set vertices and aligned cost-to-go values for the terminal
/// constraint. provenance[i] gives the (iteration, time) of column i.
struct TerminalData {
  Eigen::MatrixXd D;  // 6 x (M * |L|)
  Eigen::VectorXd J;
  std::vector<Neighbor> provenance;

  int columns() const { return static_cast<int>(D.cols()); }
};

/// M nearest stored states per selected iteration, stacked in L order.
/// Columns near the finish line are unwrapped onto the progress branch
/// nearest the query (s + m*L) with the cost-to-go continued as T - t - m*T,
/// so the terminal pull stays monotone across the line.
TerminalData build_terminal_data(const DataSet& ds, const VehicleState& xbar_terminal,
                                 std::span<const int> L, int M, const StateMetric& metric);

/// Tracking-MPC fallback configuration (centerline at reduced speed).
struct SafetyConfig {
  int horizon = 10;
  double w_vx = 1.0;
  double w_epsi = 2.0;
  double w_ey = 4.0;
  Mat2 input_reg = (Mat2() << 0.5, 0.0, 0.0, 0.5).finished();
  Mat2 rate_reg = Mat2::Identity();
  double slack_weight = 1e4;
};

/// Conservative centerline-tracking input at reference speed v_ref; runs a
/// short-horizon QP on linearized kinematics and saturates at the bounds.
ControlInput safety_controller(const VehicleState& x, const Track& track,
                               const VehicleParams& params, const InputBounds& bounds,
                               double ey_limit, double v_ref, const QpSettings& qp_settings,
                               const SafetyConfig& cfg = {});

}  // namespace mmlmpc
