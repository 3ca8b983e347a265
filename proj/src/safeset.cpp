#include "mmlmpc/safeset.hpp"

#include <algorithm>
#include <cmath>

namespace mmlmpc {

std::vector<VehicleState> propagate_current(const AtvModel& atv, const VehicleState& x0,
                                            std::span<const ControlInput> inputs) {
  if (static_cast<int>(inputs.size()) != atv.horizon())
    throw DimensionError("propagate_current: inputs do not match model horizon");
  std::vector<VehicleState> out;
  out.reserve(inputs.size() + 1);
  out.push_back(x0);
  Vec6 x = x0.to_vec();
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    x = atv.steps[k].apply(x, inputs[k].to_vec());
    out.push_back(VehicleState::from_vec(x));
  }
  return out;
}

std::vector<VehicleState> propagate_stored(const IterationRecord& rec, const VehicleState& x0,
                                           std::span<const ControlInput> inputs, int t_star) {
  const int T = rec.duration();
  if (T <= 0) throw LengthMismatchError("propagate_stored: empty record");
  if (t_star < 0) throw IndexError("propagate_stored: negative start index");
  std::vector<VehicleState> out;
  out.reserve(inputs.size() + 1);
  out.push_back(x0);
  Vec6 x = x0.to_vec();
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const AtvStep& step = rec.atv[(t_star + static_cast<int>(k)) % T];  // cyclic task
    x = step.apply(x, inputs[k].to_vec());
    out.push_back(VehicleState::from_vec(x));
  }
  return out;
}

SimilarityReport select_iterations(const std::vector<VehicleState>& current,
                                   std::map<int, std::vector<VehicleState>> stored_trajs,
                                   int n_ss, double delta) {
  if (static_cast<int>(stored_trajs.size()) < n_ss)
    throw InsufficientIterationsError("select_iterations: " +
                                      std::to_string(stored_trajs.size()) + " trajectories, " +
                                      std::to_string(n_ss) + " requested");

  SimilarityReport report;
  report.delta = delta;
  for (const auto& [id, traj] : stored_trajs) {
    if (traj.size() != current.size())
      throw DimensionError("select_iterations: trajectory length mismatch for iteration " +
                           std::to_string(id));
    double dist = 0.0;
    for (std::size_t k = 0; k < traj.size(); ++k)
      dist += (current[k].to_vec() - traj[k].to_vec()).cwiseAbs().sum();
    report.all.push_back({id, dist});
  }
  std::sort(report.all.begin(), report.all.end(), [](const auto& a, const auto& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.iter_id < b.iter_id;
  });
  for (int i = 0; i < n_ss; ++i) report.selected.push_back(report.all[i].iter_id);
  report.gate_passed = true;
  for (int i = 0; i < n_ss; ++i)
    if (!(report.all[i].distance < delta)) report.gate_passed = false;
  report.propagated = std::move(stored_trajs);
  return report;
}

bool similarity_gate(const SimilarityReport& report, double delta) {
  for (int id : report.selected) {
    for (const auto& e : report.all) {
      if (e.iter_id == id) {
        if (!(e.distance < delta)) return false;
        break;
      }
    }
  }
  return true;
}

TerminalData build_terminal_data(const DataSet& ds, const VehicleState& xbar_terminal,
                                 std::span<const int> L, int M, const StateMetric& metric) {
  const NeighborIndex nn = ds.knn_states(xbar_terminal, M, metric, L);
  const double length = ds.track_length();

  TerminalData term;
  term.D.resize(kStateDim, static_cast<int>(nn.size()));
  term.J.resize(static_cast<int>(nn.size()));
  term.provenance = nn;
  for (std::size_t i = 0; i < nn.size(); ++i) {
    const IterationRecord& rec = ds.iteration(nn[i].iter_id);
    const VehicleState& xs = rec.states[nn[i].t];
    // Unwrap s onto the branch nearest the query; continue the cost-to-go
    // across the finish line (m laps ahead costs m*T fewer steps).
    double diff = std::fmod(xs.s - xbar_terminal.s, length);
    if (diff < -0.5 * length) diff += length;
    if (diff >= 0.5 * length) diff -= length;
    const double s_col = xbar_terminal.s + diff;
    const int m = static_cast<int>(std::llround((s_col - xs.s) / length));
    Vec6 col = xs.to_vec();
    col[4] = s_col;
    term.D.col(static_cast<int>(i)) = col;
    term.J[static_cast<int>(i)] = cost_to_go(rec, nn[i].t) - m * rec.duration();
  }
  return term;
}

ControlInput safety_controller(const VehicleState& x, const Track& track,
                               const VehicleParams& params, const InputBounds& bounds,
                               double ey_limit, double v_ref, const QpSettings& qp_settings,
                               const SafetyConfig& cfg) {
  const int N = cfg.horizon;
  const double dt = params.dt;
  const double wheelbase = params.lf + params.lr;
  const double vx_nominal = std::max(x.vx, params.vx_floor + 0.05);

  // Per-step models: step 0 linearized at the actual state, later steps at a
  // nominal centerline rollout so upcoming curvature enters the plan.
  std::vector<AtvStep> model(N);
  for (int k = 0; k < N; ++k) {
    VehicleState ref = x;
    if (k > 0) {
      ref = VehicleState{vx_nominal, 0.0, 0.0, 0.0, x.s + k * dt * vx_nominal, 0.0};
    }
    AtvStep step;
    step.A(0, 0) = 1.0;  // vx+ = vx + dt a
    step.B(0, 0) = dt;
    step.A(1, 1) = 0.5;  // lateral velocity treated as decaying at low speed
    step.A(2, 2) = 0.5;  // yaw rate relaxes toward the kinematic value
    step.B(2, 1) = 0.5 * vx_nominal / wheelbase;
    const KinematicRows kin = linearize_kinematics(ref, ControlInput{}, params, track);
    step.A.bottomRows<3>() = kin.A;
    step.B.bottomRows<3>() = kin.B;
    step.g.tail<3>() = kin.g;
    model[k] = step;
  }

  // Variables: states 6(N+1), inputs 2N, e_y slack N.
  const int nx = kStateDim * (N + 1);
  const int nu = kInputDim * N;
  const int n = nx + nu + N;
  auto ix = [&](int k) { return kStateDim * k; };
  auto iu = [&](int k) { return nx + kInputDim * k; };
  auto is = [&](int k) { return nx + nu + (k - 1); };

  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(n, n);
  qp.f = Eigen::VectorXd::Zero(n);

  for (int k = 1; k <= N; ++k) {
    qp.H(ix(k) + 0, ix(k) + 0) += 2.0 * cfg.w_vx;
    qp.f[ix(k) + 0] += -2.0 * cfg.w_vx * v_ref;
    qp.H(ix(k) + 3, ix(k) + 3) += 2.0 * cfg.w_epsi;
    qp.H(ix(k) + 5, ix(k) + 5) += 2.0 * cfg.w_ey;
  }
  for (int k = 0; k < N; ++k)
    qp.H.block<2, 2>(iu(k), iu(k)) += 2.0 * cfg.input_reg;
  for (int k = 0; k + 1 < N; ++k) {
    qp.H.block<2, 2>(iu(k), iu(k)) += 2.0 * cfg.rate_reg;
    qp.H.block<2, 2>(iu(k + 1), iu(k + 1)) += 2.0 * cfg.rate_reg;
    qp.H.block<2, 2>(iu(k), iu(k + 1)) -= 2.0 * cfg.rate_reg;
    qp.H.block<2, 2>(iu(k + 1), iu(k)) -= 2.0 * cfg.rate_reg;
  }
  for (int k = 1; k <= N; ++k) {
    qp.H(is(k), is(k)) += 2.0 * cfg.slack_weight;
    qp.f[is(k)] += cfg.slack_weight;
  }

  const int me = kStateDim * (N + 1);
  qp.A_eq = Eigen::MatrixXd::Zero(me, n);
  qp.b_eq = Eigen::VectorXd::Zero(me);
  qp.A_eq.block<6, 6>(0, ix(0)).setIdentity();
  qp.b_eq.head<6>() = x.to_vec();
  for (int k = 0; k < N; ++k) {
    const int r = kStateDim * (k + 1);
    qp.A_eq.block<6, 6>(r, ix(k + 1)).setIdentity();
    qp.A_eq.block<6, 6>(r, ix(k)) = -model[k].A;
    qp.A_eq.block<6, 2>(r, iu(k)) = -model[k].B;
    qp.b_eq.segment<6>(r) = model[k].g;
  }

  const int mi = 4 * N + 2 * N + N;
  qp.A_in = Eigen::MatrixXd::Zero(mi, n);
  qp.b_in = Eigen::VectorXd::Zero(mi);
  int r = 0;
  for (int k = 0; k < N; ++k) {
    qp.A_in(r, iu(k) + 0) = 1.0;
    qp.b_in[r++] = bounds.a_max;
    qp.A_in(r, iu(k) + 0) = -1.0;
    qp.b_in[r++] = -bounds.a_min;
    qp.A_in(r, iu(k) + 1) = 1.0;
    qp.b_in[r++] = bounds.delta_max;
    qp.A_in(r, iu(k) + 1) = -1.0;
    qp.b_in[r++] = -bounds.delta_min;
  }
  for (int k = 1; k <= N; ++k) {
    qp.A_in(r, ix(k) + 5) = 1.0;
    qp.A_in(r, is(k)) = -1.0;
    qp.b_in[r++] = ey_limit;
    qp.A_in(r, ix(k) + 5) = -1.0;
    qp.A_in(r, is(k)) = -1.0;
    qp.b_in[r++] = ey_limit;
  }
  for (int k = 1; k <= N; ++k) {
    qp.A_in(r, is(k)) = -1.0;
    qp.b_in[r++] = 0.0;
  }

  const QpSolution sol = solve_qp(qp, qp_settings);
  if (sol.status == QpStatus::Infeasible)
    return bounds.clamp({-std::abs(bounds.a_min), 0.0});  // brake straight as last resort
  return bounds.clamp({sol.primal[iu(0) + 0], sol.primal[iu(0) + 1]});
}

}  // namespace mmlmpc
