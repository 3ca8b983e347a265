#include "mmlmpc/ftocp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace mmlmpc {

FtocpQp assemble_ftocp(const Vec6& x0, const AtvModel& atv, const TerminalData& term,
                       const StateBounds& state_bounds, const InputBounds& input_bounds,
                       const StageCost& cost) {
  const int N = atv.horizon();
  if (N < 1) throw DimensionError("assemble_ftocp: horizon must be at least 1");
  if (term.columns() < 1) throw DimensionError("assemble_ftocp: empty terminal data");
  if (term.J.size() != term.columns()) throw DimensionError("assemble_ftocp: D/J mismatch");

  FtocpLayout ly;
  ly.N = N;
  ly.n_lambda = term.columns();
  const int n = ly.n_var();

  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(n, n);
  qp.f = Eigen::VectorXd::Zero(n);
  qp.objective_constant = cost.time_weight * N;

  for (int k = 0; k < N; ++k) qp.H.block<2, 2>(ly.iu(k), ly.iu(k)) += 2.0 * cost.input_reg;
  for (int k = 0; k + 1 < N; ++k) {
    qp.H.block<2, 2>(ly.iu(k), ly.iu(k)) += 2.0 * cost.rate_reg;
    qp.H.block<2, 2>(ly.iu(k + 1), ly.iu(k + 1)) += 2.0 * cost.rate_reg;
    qp.H.block<2, 2>(ly.iu(k), ly.iu(k + 1)) -= 2.0 * cost.rate_reg;
    qp.H.block<2, 2>(ly.iu(k + 1), ly.iu(k)) -= 2.0 * cost.rate_reg;
  }
  // Terminal cost-to-go as a convex combination; small ridge keeps the
  // vertex weights unique when columns repeat.
  for (int i = 0; i < ly.n_lambda; ++i) {
    qp.f[ly.il() + i] = cost.time_weight * term.J[i];
    qp.H(ly.il() + i, ly.il() + i) += 2e-7;
  }
  for (int k = 1; k <= N; ++k) {
    qp.H(ly.isig(k), ly.isig(k)) += 2.0 * cost.slack_weight;
    qp.f[ly.isig(k)] += cost.slack_weight;
  }

  qp.A_eq = Eigen::MatrixXd::Zero(ly.n_eq(), n);
  qp.b_eq = Eigen::VectorXd::Zero(ly.n_eq());
  int r = 0;
  qp.A_eq.block<6, 6>(r, ly.ix(0)).setIdentity();
  qp.b_eq.segment<6>(r) = x0;
  r += 6;
  for (int k = 0; k < N; ++k) {
    qp.A_eq.block<6, 6>(r, ly.ix(k + 1)).setIdentity();
    qp.A_eq.block<6, 6>(r, ly.ix(k)) = -atv.steps[k].A;
    qp.A_eq.block<6, 2>(r, ly.iu(k)) = -atv.steps[k].B;
    qp.b_eq.segment<6>(r) = atv.steps[k].g;
    r += 6;
  }
  for (int i = 0; i < ly.n_lambda; ++i) qp.A_eq(r, ly.il() + i) = 1.0;
  qp.b_eq[r] = 1.0;
  r += 1;
  qp.A_eq.block<6, 6>(r, ly.ix(N)).setIdentity();
  qp.A_eq.block(r, ly.il(), 6, ly.n_lambda) = -term.D;
  r += 6;

  qp.A_in = Eigen::MatrixXd::Zero(ly.n_in(), n);
  qp.b_in = Eigen::VectorXd::Zero(ly.n_in());
  r = 0;
  for (int k = 0; k < N; ++k) {
    qp.A_in(r, ly.iu(k) + 0) = 1.0;
    qp.b_in[r++] = input_bounds.a_max;
    qp.A_in(r, ly.iu(k) + 0) = -1.0;
    qp.b_in[r++] = -input_bounds.a_min;
    qp.A_in(r, ly.iu(k) + 1) = 1.0;
    qp.b_in[r++] = input_bounds.delta_max;
    qp.A_in(r, ly.iu(k) + 1) = -1.0;
    qp.b_in[r++] = -input_bounds.delta_min;
  }
  for (int k = 1; k <= N; ++k) {
    qp.A_in(r, ly.ix(k) + 0) = 1.0;
    qp.b_in[r++] = state_bounds.vx_max;
    qp.A_in(r, ly.ix(k) + 0) = -1.0;
    qp.b_in[r++] = -state_bounds.vx_min;
  }
  for (int k = 1; k <= N; ++k) {
    qp.A_in(r, ly.ix(k) + 5) = 1.0;
    qp.A_in(r, ly.isig(k)) = -1.0;
    qp.b_in[r++] = state_bounds.ey_limit;
    qp.A_in(r, ly.ix(k) + 5) = -1.0;
    qp.A_in(r, ly.isig(k)) = -1.0;
    qp.b_in[r++] = state_bounds.ey_limit;
  }
  for (int k = 1; k <= N; ++k) {
    qp.A_in(r, ly.isig(k)) = -1.0;
    qp.b_in[r++] = 0.0;
  }
  for (int i = 0; i < ly.n_lambda; ++i) {
    qp.A_in(r, ly.il() + i) = -1.0;
    qp.b_in[r++] = 0.0;
  }

  return {std::move(qp), ly};
}

LmpcController::LmpcController(ControllerConfig cfg, const Track& track,
                               const VehicleParams& params)
    : cfg_(std::move(cfg)),
      track_(track),
      params_(params),
      fit_metric_(make_fit_weight(cfg_), track.total_length()),
      terminal_metric_(cfg_.d_weight, track.total_length()) {}

Mat11 LmpcController::make_fit_weight(const ControllerConfig& cfg) {
  if (cfg.policy == Policy::MultiModal) return cfg.q_weight;
  // Baseline identifies neighbors on the state alone: zero out the input and
  // successor blocks of the tuple metric.
  Mat11 w = Mat11::Zero();
  w.topLeftCorner<6, 6>() = cfg.q_weight.topLeftCorner<6, 6>();
  return w;
}

void LmpcController::begin_lap() {
  have_prev_ = false;
  have_warm_ = false;
}

LmpcController::Candidate LmpcController::make_candidate(const VehicleState& x,
                                                         const DataSet& ds) const {
  const int N = cfg_.N;
  Candidate c;
  c.states.resize(N + 1);
  c.inputs.resize(N);
  c.predicted_next.resize(N);

  if (have_prev_) {
    // Shift the previous optimal solution one step.
    c.states[0] = x;
    for (int k = 1; k < N; ++k) c.states[k] = prev_plan_.states[k + 1];
    const Vec6 tail = prev_last_model_.apply(prev_plan_.states[N].to_vec(),
                                             prev_plan_.inputs[N - 1].to_vec());
    c.states[N] = VehicleState::from_vec(tail);
    for (int k = 0; k < N - 1; ++k) c.inputs[k] = prev_plan_.inputs[k + 1];
    c.inputs[N - 1] = prev_plan_.inputs[N - 1];
  } else {
    // Cold start: roll out the stored model nearest in state.
    int best_iter = -1, best_t = 0;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& rec : ds.iterations()) {
      const int t = nearest_time_index(rec, x, track_.total_length());
      Vec6 d = rec.states[t].to_vec() - x.to_vec();
      d[4] = track_.wrapped_diff(rec.states[t].s, x.s);
      const double l1 = d.cwiseAbs().sum();
      if (l1 < best) {
        best = l1;
        best_iter = rec.iter_id;
        best_t = t;
      }
    }
    const IterationRecord& rec = ds.iteration(best_iter);
    const int T = rec.duration();
    c.states[0] = x;
    Vec6 xs = x.to_vec();
    for (int k = 0; k < N; ++k) {
      const int idx = (best_t + k) % T;
      c.inputs[k] = rec.inputs[idx];
      xs = rec.atv[idx].apply(xs, c.inputs[k].to_vec());
      c.states[k + 1] = VehicleState::from_vec(xs);
    }
  }
  for (int k = 0; k < N; ++k) c.predicted_next[k] = c.states[k + 1];
  return c;
}

StepResult LmpcController::safety_fallback(const VehicleState& x, StepDiagnostics diag,
                                           std::chrono::steady_clock::time_point t_start) {
  diag.safety_engaged = true;
  StepResult res;
  try {
    res.u = safety_controller(x, track_, params_, cfg_.input_bounds, cfg_.state_bounds.ey_limit,
                              cfg_.safety_v_ref, cfg_.qp, cfg_.safety);
  } catch (const Error&) {
    // Even the tracking QP could not be posed (e.g. the measured state is
    // already past the curvature center): brake straight.
    res.u = cfg_.input_bounds.clamp({cfg_.input_bounds.a_min, 0.0});
  }
  diag.solve_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t_start).count();
  res.diag = std::move(diag);
  return res;
}

StepResult LmpcController::lmpc_step(const VehicleState& x, const DataSet& ds) {
  const auto t_start = std::chrono::steady_clock::now();
  if (static_cast<int>(ds.iterations().size()) < 2)
    throw InsufficientDataError("lmpc_step needs at least 2 stored iterations");

  StepDiagnostics diag;
  const int N = cfg_.N;
  const Candidate cand = make_candidate(x, ds);

  AtvModel atv;
  std::vector<FitDiagnostics> fit_diags;
  try {
    atv = build_atv(ds, cand.states, cand.inputs, cand.predicted_next, params_, track_,
                    fit_metric_, cfg_.fit, &fit_diags);
  } catch (const Error&) {
    // Degenerate regression or a candidate state past the curvature center.
    diag.degenerate_fallback = true;
    have_prev_ = false;
    have_warm_ = false;
    return safety_fallback(x, std::move(diag), t_start);
  }
  diag.fit_effective_min = fit_diags.empty() ? 0 : fit_diags.front().n_effective;
  for (const auto& d : fit_diags) {
    diag.fit_effective_min = std::min(diag.fit_effective_min, d.n_effective);
    diag.fit_condition_max = std::max(diag.fit_condition_max, d.condition);
  }

  std::vector<int> selected;
  if (cfg_.policy == Policy::MultiModal) {
    const std::vector<VehicleState> current = propagate_current(atv, x, cand.inputs);
    std::map<int, std::vector<VehicleState>> stored;
    for (const auto& rec : ds.iterations()) {
      const int t_star = nearest_time_index(rec, x, track_.total_length());
      stored[rec.iter_id] = propagate_stored(rec, x, cand.inputs, t_star);
    }
    const SimilarityReport report =
        select_iterations(current, std::move(stored), cfg_.N_SS, cfg_.delta_gate);
    diag.gate_passed = report.gate_passed;
    diag.selected = report.selected;
    for (int i = 0; i < cfg_.N_SS; ++i) diag.selected_distances.push_back(report.all[i].distance);
    if (!report.gate_passed) {
      have_prev_ = false;
      have_warm_ = false;
      return safety_fallback(x, std::move(diag), t_start);
    }
    selected = report.selected;
  } else {
    // Prior-work behavior: the most recent iterations, no similarity gate.
    std::vector<int> ids;
    for (const auto& rec : ds.iterations()) ids.push_back(rec.iter_id);
    std::sort(ids.begin(), ids.end());
    if (static_cast<int>(ids.size()) < cfg_.N_SS)
      throw InsufficientIterationsError("baseline safe set needs N_SS stored iterations");
    selected.assign(ids.end() - cfg_.N_SS, ids.end());
    diag.gate_passed = true;
    diag.selected = selected;
  }

  TerminalData term;
  FtocpQp fq;
  try {
    term = build_terminal_data(ds, cand.states[N], selected, cfg_.M, terminal_metric_);
    fq = assemble_ftocp(x.to_vec(), atv, term, cfg_.state_bounds, cfg_.input_bounds, cfg_.cost);
  } catch (const Error&) {
    diag.degenerate_fallback = true;
    have_prev_ = false;
    have_warm_ = false;
    return safety_fallback(x, std::move(diag), t_start);
  }
  diag.provenance_ok = true;
  for (const auto& nb : term.provenance)
    if (std::find(selected.begin(), selected.end(), nb.iter_id) == selected.end())
      diag.provenance_ok = false;

  const QpWarmStart* warm =
      (have_warm_ && warm_.primal.size() == fq.qp.n()) ? &warm_ : nullptr;
  const QpSolution sol = solve_qp(fq.qp, cfg_.qp, warm);
  diag.status = sol.status;
  diag.qp_iterations = sol.iterations;
  diag.objective = sol.objective;

  if (sol.status != QpStatus::Optimal) {
    diag.solver_fallback = true;
    have_prev_ = false;
    have_warm_ = false;
    return safety_fallback(x, std::move(diag), t_start);
  }

  diag.kkt_max = kkt_residuals(fq.qp, sol).max_residual();
  const FtocpLayout& ly = fq.layout;
  const Eigen::VectorXd lambda = sol.primal.segment(ly.il(), ly.n_lambda);
  diag.lambda_min = lambda.minCoeff();
  diag.lambda_sum_err = std::abs(lambda.sum() - 1.0);
  const Vec6 x_terminal = sol.primal.segment<6>(ly.ix(N));
  diag.ss_residual = (x_terminal - term.D * lambda).cwiseAbs().maxCoeff();

  StepResult res;
  res.plan.states.resize(N + 1);
  res.plan.inputs.resize(N);
  for (int k = 0; k <= N; ++k)
    res.plan.states[k] = VehicleState::from_vec(sol.primal.segment<6>(ly.ix(k)));
  for (int k = 0; k < N; ++k)
    res.plan.inputs[k] = ControlInput::from_vec(sol.primal.segment<2>(ly.iu(k)));
  res.u = cfg_.input_bounds.clamp(res.plan.inputs[0]);

  prev_plan_ = res.plan;
  prev_last_model_ = atv.steps.back();
  have_prev_ = true;
  warm_.primal = sol.primal;
  warm_.dual_eq = sol.dual_eq;
  warm_.dual_in = sol.dual_in;
  have_warm_ = true;

  diag.solve_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t_start).count();
  res.diag = std::move(diag);
  return res;
}

}  // namespace mmlmpc
