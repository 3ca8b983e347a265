#include "mmlmpc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mmlmpc {

namespace {

struct LapTrace {
  std::vector<VehicleState> states;
  std::vector<ControlInput> inputs;
  std::vector<StepDiagnostics> diags;  // empty for PID laps
  bool completed = false;
  bool violated = false;
  double lap_time_s = std::numeric_limits<double>::quiet_NaN();
};

// Fractional lap time: interpolate the crossing inside the final step.
double fractional_lap_time(const std::vector<VehicleState>& states, double total_length,
                           double dt) {
  const int T = static_cast<int>(states.size()) - 1;
  const double s_prev = states[T - 1].s;
  const double s_last = states[T].s;
  double frac = 1.0;
  if (s_last > s_prev) frac = std::clamp((total_length - s_prev) / (s_last - s_prev), 0.0, 1.0);
  return (static_cast<double>(T - 1) + frac) * dt;
}

LapTrace simulate_pid_lap(const Scenario& scn, const FrictionMap& map, double v_ref_lap,
                          std::mt19937_64& rng) {
  const Track& track = scn.track;
  const VehicleParams& p = scn.params;
  const BootstrapConfig& bc = scn.bootstrap;
  const InputBounds& ub = scn.controller.input_bounds;
  std::normal_distribution<double> noise(0.0, 1.0);

  LapTrace lap;
  VehicleState x = scn.start_state;
  lap.states.push_back(x);
  for (int t = 0; t < scn.max_steps_per_lap; ++t) {
    const double kappa = track.curvature_at(x.s);
    ControlInput u;
    u.delta = std::atan(kappa * (p.lf + p.lr)) - bc.k_ey * x.e_y - bc.k_epsi * x.e_psi +
              bc.dither_delta * noise(rng);
    u.a = bc.k_v * (v_ref_lap - x.vx) + bc.dither_a * noise(rng);
    u = ub.clamp(u);

    VehicleState next;
    try {
      next = step_true(x, u, p, track, map);
    } catch (const SingularityError&) {
      lap.violated = true;
      break;
    }
    lap.inputs.push_back(u);
    lap.states.push_back(next);
    x = next;
    if (std::abs(x.e_y) > track.half_width()) {
      lap.violated = true;
      break;
    }
    if (lap_done(x, track)) {
      lap.completed = true;
      break;
    }
  }
  if (lap.completed)
    lap.lap_time_s = fractional_lap_time(lap.states, track.total_length(), p.dt);
  return lap;
}

std::string hist_to_string(const std::map<int, int>& hist) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [id, count] : hist) {
    if (!first) os << '|';
    os << id << ':' << count;
    first = false;
  }
  return os.str();
}

class RunWriter {
 public:
  explicit RunWriter(const std::filesystem::path& dir) : dir_(dir) {
    std::filesystem::create_directories(dir_);
    metrics_.open(dir_ / "metrics.csv");
    timing_.open(dir_ / "timing.csv");
    metrics_ << "kind,policy,iter,controlled_index,steps,lap_time_s,completed,violated,"
                "safety_steps,gate_failures,qp_fallbacks,degenerate_fallbacks,max_kkt,"
                "max_ss_residual,min_lambda,max_lambda_sum_err,provenance_ok,mean_qp_iters,"
                "sel_hist\n";
    timing_ << "iter,mean_solve_ms\n";
  }

  void write_lap(const LapMetrics& m) {
    metrics_ << m.kind << ',' << m.policy << ',' << m.iter << ',' << m.controlled_index << ','
             << m.steps << ',';
    if (std::isnan(m.lap_time_s))
      metrics_ << "nan";
    else
      metrics_ << std::setprecision(6) << std::fixed << m.lap_time_s << std::defaultfloat
               << std::setprecision(17);
    metrics_ << ',' << (m.completed ? 1 : 0) << ',' << (m.constraint_violated ? 1 : 0) << ','
             << m.safety_steps << ',' << m.gate_failures << ',' << m.qp_fallbacks << ','
             << m.degenerate_fallbacks << ',' << std::setprecision(6) << std::scientific
             << m.max_kkt << ',' << m.max_ss_residual << ',' << m.min_lambda << ','
             << m.max_lambda_sum_err << std::defaultfloat << ',' << (m.provenance_ok ? 1 : 0)
             << ',' << std::setprecision(3) << std::fixed << m.mean_qp_iters << std::defaultfloat
             << ',' << hist_to_string(m.selected_hist) << '\n';
    metrics_.flush();
    timing_ << m.iter << ',' << std::setprecision(4) << std::fixed << m.mean_solve_ms
            << std::defaultfloat << '\n';
    timing_.flush();
  }

  void write_steps(int iter, const LapTrace& lap, double dt) {
    std::ofstream f(dir_ / ("steps_" + std::to_string(iter) + ".csv"));
    f << "t,time_s,s,e_y,vx,vy,wz,e_psi,a,delta,gate,safety,solver_fallback,degenerate,"
         "status,qp_iters,objective,kkt,ss_resid,lambda_min,lambda_sum_err,prov_ok,"
         "fit_eff_min,fit_cond_max,sel,sel_dist\n";
    for (std::size_t t = 0; t < lap.inputs.size(); ++t) {
      const VehicleState& x = lap.states[t];
      const ControlInput& u = lap.inputs[t];
      f << t << ',' << std::setprecision(6) << std::fixed << t * dt << ',' << x.s << ','
        << x.e_y << ',' << x.vx << ',' << x.vy << ',' << x.wz << ',' << x.e_psi << ',' << u.a
        << ',' << u.delta << std::defaultfloat;
      if (t < lap.diags.size()) {
        const StepDiagnostics& d = lap.diags[t];
        const char* status = d.status == QpStatus::Optimal     ? "optimal"
                             : d.status == QpStatus::Infeasible ? "infeasible"
                                                                : "maxiter";
        f << ',' << (d.gate_passed ? 1 : 0) << ',' << (d.safety_engaged ? 1 : 0) << ','
          << (d.solver_fallback ? 1 : 0) << ',' << (d.degenerate_fallback ? 1 : 0) << ','
          << status << ',' << d.qp_iterations << ',' << std::setprecision(9) << d.objective
          << ',' << std::scientific << d.kkt_max << ',' << d.ss_residual << ',' << d.lambda_min
          << ',' << d.lambda_sum_err << std::defaultfloat << ',' << (d.provenance_ok ? 1 : 0)
          << ',' << d.fit_effective_min << ',' << std::setprecision(3) << std::scientific
          << d.fit_condition_max << std::defaultfloat << ',';
        for (std::size_t i = 0; i < d.selected.size(); ++i)
          f << (i ? ";" : "") << d.selected[i];
        f << ',';
        for (std::size_t i = 0; i < d.selected_distances.size(); ++i)
          f << (i ? ";" : "") << std::setprecision(6) << d.selected_distances[i];
      } else {
        f << ",,,,,,,,,,,,,,,,";
      }
      f << '\n';
    }
  }

  void write_horizon(int iter, const std::vector<CandidatePlan>& plans) {
    std::ofstream f(dir_ / ("horizon_" + std::to_string(iter) + ".csv"));
    f << "t,k,vx,vy,wz,e_psi,s,e_y,a,delta\n";
    for (std::size_t t = 0; t < plans.size(); ++t) {
      const CandidatePlan& plan = plans[t];
      for (std::size_t k = 0; k < plan.states.size(); ++k) {
        const VehicleState& x = plan.states[k];
        f << t << ',' << k << ',' << std::setprecision(9) << x.vx << ',' << x.vy << ',' << x.wz
          << ',' << x.e_psi << ',' << x.s << ',' << x.e_y;
        if (k < plan.inputs.size())
          f << ',' << plan.inputs[k].a << ',' << plan.inputs[k].delta;
        else
          f << ",,";
        f << '\n';
      }
    }
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::ofstream metrics_;
  std::ofstream timing_;
};

LapMetrics summarize_lap(const LapTrace& lap, const std::string& kind, const std::string& policy,
                         int iter, int controlled_index) {
  LapMetrics m;
  m.kind = kind;
  m.policy = policy;
  m.iter = iter;
  m.controlled_index = controlled_index;
  m.steps = static_cast<int>(lap.inputs.size());
  m.lap_time_s = lap.lap_time_s;
  m.completed = lap.completed;
  m.constraint_violated = lap.violated;
  double qp_iters = 0.0, solve_ms = 0.0;
  int solved = 0;
  for (const auto& d : lap.diags) {
    if (d.safety_engaged) ++m.safety_steps;
    if (!d.gate_passed) ++m.gate_failures;
    if (d.solver_fallback) ++m.qp_fallbacks;
    if (d.degenerate_fallback) ++m.degenerate_fallbacks;
    solve_ms += d.solve_ms;
    if (d.status == QpStatus::Optimal && !d.safety_engaged) {
      m.max_kkt = std::max(m.max_kkt, d.kkt_max);
      m.max_ss_residual = std::max(m.max_ss_residual, d.ss_residual);
      m.min_lambda = std::min(m.min_lambda, d.lambda_min);
      m.max_lambda_sum_err = std::max(m.max_lambda_sum_err, d.lambda_sum_err);
      if (!d.provenance_ok) m.provenance_ok = false;
      qp_iters += d.qp_iterations;
      ++solved;
    }
    for (int id : d.selected) ++m.selected_hist[id];
  }
  if (solved > 0) m.mean_qp_iters = qp_iters / solved;
  if (!lap.diags.empty()) m.mean_solve_ms = solve_ms / static_cast<double>(lap.diags.size());
  return m;
}

}  // namespace

DataSet run_bootstrap(const Scenario& scn, std::mt19937_64& rng,
                      const std::filesystem::path* run_dir, std::vector<LapMetrics>* metrics) {
  scn.validate();
  DataSet ds(scn.track.total_length());
  const TupleMetric metric(scn.controller.q_weight, scn.track.total_length());
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  int iter_id = 0;
  for (const auto& mode : scn.bootstrap.modes) {
    const FrictionMap map = mode.build(scn.track.total_length());
    for (int lap_i = 0; lap_i < scn.bootstrap.laps_per_mode; ++lap_i) {
      const double v_ref_lap =
          scn.bootstrap.v_ref * (1.0 + scn.bootstrap.v_ref_jitter * jitter(rng));
      const LapTrace lap = simulate_pid_lap(scn, map, v_ref_lap, rng);
      if (!lap.completed)
        throw BootstrapFailure("PID bootstrap lap " + std::to_string(iter_id) +
                               (lap.violated ? " violated constraints" : " did not finish"));

      IterationRecord rec;
      rec.iter_id = iter_id;
      rec.states = lap.states;
      rec.inputs = lap.inputs;
      rec.atv = fit_lap_models(lap.states, lap.inputs, scn.params, scn.track, metric,
                               scn.controller.fit);
      rec.feasible = true;
      if (run_dir) write_iteration_file(*run_dir, rec, map);
      if (metrics)
        metrics->push_back(summarize_lap(lap, "pid", "pid", iter_id, -1));
      ds.insert_iteration(std::move(rec));
      ++iter_id;
    }
  }
  return ds;
}

ExperimentResult run_experiment(const Scenario& scn, Policy policy,
                                const std::filesystem::path& out_dir) {
  scn.validate();
  RunWriter writer(out_dir);
  write_scenario_snapshot(out_dir, scn);
  std::mt19937_64 rng(scn.seed);

  ExperimentResult result;
  std::vector<LapMetrics> boot_metrics;
  DataSet ds = run_bootstrap(scn, rng, &writer.dir(), &boot_metrics);
  for (const auto& m : boot_metrics) {
    writer.write_lap(m);
    result.laps.push_back(m);
  }

  ControllerConfig cfg = scn.controller;
  cfg.policy = policy;
  LmpcController ctrl(cfg, scn.track, scn.params);
  const std::string policy_name = (policy == Policy::MultiModal) ? "mm" : "baseline";

  int iter_id = static_cast<int>(ds.iterations().size());
  const int last_schedule_change =
      scn.friction_schedule.empty() ? 0 : scn.friction_schedule.back().first;
  std::vector<double> recent_times;

  for (int k = 0; k < scn.max_iterations; ++k) {
    const FrictionMap map = scn.map_for_iteration(k);
    LapTrace lap;
    std::vector<CandidatePlan> plans;
    VehicleState x = scn.start_state;
    lap.states.push_back(x);
    ctrl.begin_lap();

    for (int t = 0; t < scn.max_steps_per_lap; ++t) {
      StepResult res = ctrl.lmpc_step(x, ds);
      VehicleState next;
      try {
        next = step_true(x, res.u, scn.params, scn.track, map);
      } catch (const SingularityError&) {
        lap.violated = true;
        lap.diags.push_back(res.diag);
        lap.inputs.push_back(res.u);
        lap.states.push_back(x);  // keep lengths consistent for the trace
        break;
      }
      lap.inputs.push_back(res.u);
      lap.diags.push_back(res.diag);
      if (scn.dump_horizon && !res.plan.states.empty()) plans.push_back(res.plan);
      lap.states.push_back(next);
      x = next;
      if (std::abs(x.e_y) > scn.track.half_width()) {
        lap.violated = true;
        break;
      }
      if (lap_done(x, scn.track)) {
        lap.completed = true;
        break;
      }
    }
    if (lap.completed)
      lap.lap_time_s = fractional_lap_time(lap.states, scn.track.total_length(), scn.params.dt);

    LapMetrics m = summarize_lap(lap, "ctrl", policy_name, iter_id, k);
    writer.write_lap(m);
    writer.write_steps(iter_id, lap, scn.params.dt);
    if (scn.dump_horizon) writer.write_horizon(iter_id, plans);
    result.laps.push_back(m);

    if (lap.violated) {
      result.any_violation = true;
      if (result.first_violation < 0) result.first_violation = k;
    }

    IterationRecord rec;
    rec.iter_id = iter_id;
    rec.states = lap.states;
    rec.inputs = lap.inputs;
    rec.feasible = lap.completed && !lap.violated;
    if (rec.feasible) {
      const TupleMetric metric(scn.controller.q_weight, scn.track.total_length());
      rec.atv = fit_lap_models(lap.states, lap.inputs, scn.params, scn.track, metric,
                               scn.controller.fit);
      write_iteration_file(writer.dir(), rec, map);
      ds.insert_iteration(std::move(rec));
    } else if (!lap.states.empty() && !lap.inputs.empty() &&
               lap.states.size() == lap.inputs.size() + 1) {
      rec.atv.assign(rec.inputs.size(), AtvStep{});
      write_iteration_file(writer.dir(), rec, map);
    }
    ++iter_id;

    // Convergence: three most recent completed laps within epsilon, and no
    // friction-schedule change still pending.
    if (lap.completed && !lap.violated)
      recent_times.push_back(lap.lap_time_s);
    else
      recent_times.clear();
    if (recent_times.size() >= 3 && k >= last_schedule_change) {
      const std::size_t n = recent_times.size();
      const double d1 = std::abs(recent_times[n - 1] - recent_times[n - 2]);
      const double d2 = std::abs(recent_times[n - 2] - recent_times[n - 3]);
      if (d1 < scn.convergence_epsilon && d2 < scn.convergence_epsilon) {
        result.converged_at = k;
        break;
      }
    }
  }
  return result;
}

std::vector<SlipAngles> compute_slip_angles(std::span<const VehicleState> states,
                                            std::span<const ControlInput> inputs,
                                            const VehicleParams& params) {
  if (states.size() < inputs.size())
    throw DimensionError("compute_slip_angles: fewer states than inputs");
  std::vector<SlipAngles> out;
  out.reserve(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t)
    out.push_back(slip_angles(states[t], inputs[t], params));
  return out;
}

}  // namespace mmlmpc
