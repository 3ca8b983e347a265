#pragma once

#include <chrono>
#include <optional>

#include "mmlmpc/safeset.hpp"

namespace mmlmpc {

/// Stage-cost parameters for the minimum-time FTOCP. The per-step time cost
/// is constant over a fixed horizon, so it enters the objective as a
/// constant; the terminal cost-to-go J'lambda carries the time signal.
struct StageCost {
  double time_weight = 1.0;
  Mat2 input_reg = (Mat2() << 0.1, 0.0, 0.0, 0.1).finished();
  Mat2 rate_reg = Mat2::Identity();
  double slack_weight = 1e4;
};

/// Hard velocity box and slack-backed lateral bound for the QP.
struct StateBounds {
  double vx_min = 0.15;
  double vx_max = 4.0;
  double ey_limit = 0.4;
};

/// Variable layout of the assembled QP:
/// [x_0..x_N | u_0..u_{N-1} | lambda | sigma_1..sigma_N].
struct FtocpLayout {
  int N = 0;
  int n_lambda = 0;

  int ix(int k) const { return kStateDim * k; }
  int iu(int k) const { return kStateDim * (N + 1) + kInputDim * k; }
  int il() const { return kStateDim * (N + 1) + kInputDim * N; }
  int isig(int k) const { return il() + n_lambda + (k - 1); }  // k in [1, N]
  int n_var() const { return il() + n_lambda + N; }
  int n_eq() const { return kStateDim * (N + 2) + 1; }
  int n_in() const { return 4 * N + 2 * N + 2 * N + N + n_lambda; }
};

struct FtocpQp {
  QpProblem qp;
  FtocpLayout layout;
};

/// Dense QP encoding of the finite-time OCP: initial condition, ATV dynamics
/// equalities, hard input/velocity boxes, slack-softened e_y bounds, and the
/// terminal convex-hull constraint x_N = D lambda with cost J'lambda.
FtocpQp assemble_ftocp(const Vec6& x0, const AtvModel& atv, const TerminalData& term,
                       const StateBounds& state_bounds, const InputBounds& input_bounds,
                       const StageCost& cost);

enum class Policy {
  Baseline,   // state-only neighbors, most-recent-iterations safe set
  MultiModal  // z-tuple neighbors, similarity-gated safe set
};

struct ControllerConfig {
  Policy policy = Policy::MultiModal;
  int N = 12;
  int M = 10;
  int N_SS = 2;
  LocalFitConfig fit;
  Mat11 q_weight = Mat11::Identity();  // tuple metric weights
  Mat6 d_weight = Mat6::Identity();    // terminal state metric weights
  double delta_gate = 2.0;
  double safety_v_ref = 1.0;
  StageCost cost;
  StateBounds state_bounds;
  InputBounds input_bounds;
  QpSettings qp;
  SafetyConfig safety;
};

struct StepDiagnostics {
  bool gate_passed = true;
  bool safety_engaged = false;
  bool solver_fallback = false;
  bool degenerate_fallback = false;
  QpStatus status = QpStatus::MaxIter;
  int qp_iterations = 0;
  double objective = 0.0;
  double kkt_max = 0.0;
  double ss_residual = 0.0;      // ||x_N - D lambda||_inf
  double lambda_min = 0.0;
  double lambda_sum_err = 0.0;   // |1'lambda - 1|
  bool provenance_ok = true;
  std::vector<int> selected;
  std::vector<double> selected_distances;
  int fit_effective_min = 0;
  double fit_condition_max = 0.0;
  double solve_ms = 0.0;
};

struct StepResult {
  ControlInput u;
  CandidatePlan plan;  // optimal plan from this solve (safety steps: empty)
  StepDiagnostics diag;
};

/// Receding-horizon MM-LMPC / baseline-LMPC step executor. Holds the shifted
/// previous solution between calls; begin_lap() clears it.
class LmpcController {
 public:
  LmpcController(ControllerConfig cfg, const Track& track, const VehicleParams& params);

  void begin_lap();

  /// Full per-step pipeline. Never throws on solver or regression trouble:
  /// falls back to the safety controller and flags the diagnostic instead.
  StepResult lmpc_step(const VehicleState& x, const DataSet& ds);

  const ControllerConfig& config() const { return cfg_; }

 private:
  struct Candidate {
    std::vector<VehicleState> states;
    std::vector<ControlInput> inputs;
    std::vector<VehicleState> predicted_next;
  };
  static Mat11 make_fit_weight(const ControllerConfig& cfg);
  Candidate make_candidate(const VehicleState& x, const DataSet& ds) const;
  StepResult safety_fallback(const VehicleState& x, StepDiagnostics diag,
                             std::chrono::steady_clock::time_point t_start);

  ControllerConfig cfg_;
  const Track& track_;
  VehicleParams params_;
  TupleMetric fit_metric_;
  StateMetric terminal_metric_;

  bool have_prev_ = false;
  CandidatePlan prev_plan_;
  AtvStep prev_last_model_;
  QpWarmStart warm_;
  bool have_warm_ = false;
};

}  // namespace mmlmpc
