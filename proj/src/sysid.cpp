#include "mmlmpc/sysid.hpp"

#include <algorithm>
#include <cmath>

namespace mmlmpc {

double epanechnikov(double u) {
  if (std::abs(u) >= 1.0) return 0.0;
  return 0.75 * (1.0 - u * u);
}

namespace {

using Mat5 = Eigen::Matrix<double, 5, 5>;
using Vec5 = Eigen::Matrix<double, 5, 1>;

// Solves one ridge-regularized weighted normal equation; returns the
// coefficient vector and the condition number of the normal matrix.
Vec5 solve_row(const Eigen::MatrixXd& phi, const Eigen::VectorXd& w, const Eigen::VectorXd& y,
               double ridge, double max_condition, double* condition) {
  Mat5 G = phi.transpose() * w.asDiagonal() * phi;
  G += ridge * Mat5::Identity();
  const Vec5 b = phi.transpose() * (w.cwiseProduct(y));

  Eigen::SelfAdjointEigenSolver<Mat5> es(G);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  const double cond = (lo > 0.0) ? hi / lo : std::numeric_limits<double>::infinity();
  if (condition) *condition = std::max(*condition, cond);
  if (!(cond < max_condition))
    throw DegenerateDataError("normal matrix numerically singular (cond = " +
                              std::to_string(cond) + ")");
  return G.ldlt().solve(b);
}

}  // namespace

GammaTriple fit_from_tuples(std::span<const DynTuple> tuples, std::span<const double> dist_sq,
                            const LocalFitConfig& cfg, FitDiagnostics* diag) {
  const int n = static_cast<int>(tuples.size());
  if (n != static_cast<int>(dist_sq.size()))
    throw DimensionError("fit_from_tuples: tuples and distances disagree");
  if (n < cfg.min_effective)
    throw DegenerateDataError("only " + std::to_string(n) + " neighbors available");

  double eta = cfg.eta;
  if (eta <= 0.0) {
    const double d_max = *std::max_element(dist_sq.begin(), dist_sq.end());
    eta = std::max(d_max, 1e-14) * cfg.eta_scale;
  }

  Eigen::VectorXd w(n);
  int effective = 0;
  for (int i = 0; i < n; ++i) {
    w[i] = epanechnikov(dist_sq[i] / eta);
    if (w[i] > 0.0) ++effective;
  }
  if (effective < cfg.min_effective)
    throw DegenerateDataError("only " + std::to_string(effective) +
                              " neighbors inside the kernel bandwidth");

  // Regressors [vx, vy, wz, input, 1]; the input column is a for the vx row
  // and delta for the vy/wz rows.
  Eigen::MatrixXd phi_a(n, 5), phi_d(n, 5);
  Eigen::VectorXd y_vx(n), y_vy(n), y_wz(n);
  for (int i = 0; i < n; ++i) {
    const DynTuple& z = tuples[i];
    phi_a.row(i) << z.x.vx, z.x.vy, z.x.wz, z.u.a, 1.0;
    phi_d.row(i) << z.x.vx, z.x.vy, z.x.wz, z.u.delta, 1.0;
    y_vx[i] = z.x_next.vx;
    y_vy[i] = z.x_next.vy;
    y_wz[i] = z.x_next.wz;
  }

  double cond = 0.0;
  GammaTriple out;
  out.gamma_vx = solve_row(phi_a, w, y_vx, cfg.ridge, cfg.max_condition, &cond);
  out.gamma_vy = solve_row(phi_d, w, y_vy, cfg.ridge, cfg.max_condition, &cond);
  out.gamma_wz = solve_row(phi_d, w, y_wz, cfg.ridge, cfg.max_condition, &cond);

  if (diag) {
    diag->n_neighbors = n;
    diag->n_effective = effective;
    diag->condition = cond;
    diag->eta = eta;
    diag->weight_sum = w.sum();
  }
  return out;
}

GammaTriple fit_local_model(const DataSet& ds, const DynTuple& zbar, const TupleMetric& metric,
                            const LocalFitConfig& cfg, FitDiagnostics* diag) {
  const NeighborIndex nn = ds.knn_tuples(zbar, cfg.P, metric);
  std::vector<DynTuple> tuples;
  std::vector<double> dists;
  tuples.reserve(nn.size());
  dists.reserve(nn.size());
  for (const auto& nb : nn) {
    tuples.push_back(ds.tuple_at(nb.iter_id, nb.t));
    dists.push_back(nb.dist_sq);
  }
  return fit_from_tuples(tuples, dists, cfg, diag);
}

Vec3 kinematics_f1(const VehicleState& x, const VehicleParams& p, double kappa) {
  const double denom = 1.0 - kappa * x.e_y;
  if (denom <= 0.0)
    throw SingularityError("vehicle at or beyond curvature center (1 - kappa*e_y <= 0)");
  const double cp = std::cos(x.e_psi);
  const double sp = std::sin(x.e_psi);
  const double s_dot = (x.vx * cp - x.vy * sp) / denom;
  Vec3 next;
  next[0] = x.e_psi + p.dt * (x.wz - kappa * s_dot);
  next[1] = x.s + p.dt * s_dot;
  next[2] = x.e_y + p.dt * (x.vx * sp + x.vy * cp);
  return next;
}

KinematicRows linearize_kinematics(const VehicleState& x, const ControlInput& u,
                                   const VehicleParams& p, const Track& track) {
  const double kappa = track.curvature_at(x.s);
  const double denom = 1.0 - kappa * x.e_y;
  if (denom <= 0.0)
    throw SingularityError("vehicle at or beyond curvature center (1 - kappa*e_y <= 0)");

  const double cp = std::cos(x.e_psi);
  const double sp = std::sin(x.e_psi);
  const double num = x.vx * cp - x.vy * sp;       // transverse-projected speed
  const double lat = x.vx * sp + x.vy * cp;       // d(e_y)/dt
  const double dt = p.dt;

  // d(s_dot)/d[vx, vy, e_psi, e_y]; curvature frozen at x.s so d/ds = 0.
  const double dsdot_dvx = cp / denom;
  const double dsdot_dvy = -sp / denom;
  const double dsdot_dpsi = -lat / denom;
  const double dsdot_dey = num * kappa / (denom * denom);

  KinematicRows rows;
  // Row 0: e_psi update.
  rows.A(0, 0) = -dt * kappa * dsdot_dvx;
  rows.A(0, 1) = -dt * kappa * dsdot_dvy;
  rows.A(0, 2) = dt;
  rows.A(0, 3) = 1.0 - dt * kappa * dsdot_dpsi;
  rows.A(0, 5) = -dt * kappa * dsdot_dey;
  // Row 1: s update.
  rows.A(1, 0) = dt * dsdot_dvx;
  rows.A(1, 1) = dt * dsdot_dvy;
  rows.A(1, 3) = dt * dsdot_dpsi;
  rows.A(1, 4) = 1.0;
  rows.A(1, 5) = dt * dsdot_dey;
  // Row 2: e_y update.
  rows.A(2, 0) = dt * sp;
  rows.A(2, 1) = dt * cp;
  rows.A(2, 3) = dt * num;
  rows.A(2, 5) = 1.0;

  (void)u;  // inputs do not enter the kinematics; B stays zero

  rows.g = kinematics_f1(x, p, kappa) - rows.A * x.to_vec();
  return rows;
}

AtvStep assemble_atv_step(const GammaTriple& gamma, const KinematicRows& kin) {
  AtvStep step;
  step.A.row(0).head<3>() = gamma.gamma_vx.head<3>().transpose();
  step.A.row(1).head<3>() = gamma.gamma_vy.head<3>().transpose();
  step.A.row(2).head<3>() = gamma.gamma_wz.head<3>().transpose();
  step.B(0, 0) = gamma.gamma_vx[3];
  step.B(1, 1) = gamma.gamma_vy[3];
  step.B(2, 1) = gamma.gamma_wz[3];
  step.g[0] = gamma.gamma_vx[4];
  step.g[1] = gamma.gamma_vy[4];
  step.g[2] = gamma.gamma_wz[4];
  step.A.bottomRows<3>() = kin.A;
  step.B.bottomRows<3>() = kin.B;
  step.g.tail<3>() = kin.g;
  return step;
}

AtvModel build_atv(const DataSet& ds, std::span<const VehicleState> candidate_states,
                   std::span<const ControlInput> candidate_inputs,
                   std::span<const VehicleState> predicted_next, const VehicleParams& params,
                   const Track& track, const TupleMetric& metric, const LocalFitConfig& cfg,
                   std::vector<FitDiagnostics>* diags) {
  const int N = static_cast<int>(candidate_inputs.size());
  if (static_cast<int>(candidate_states.size()) != N + 1 ||
      static_cast<int>(predicted_next.size()) != N)
    throw DimensionError("build_atv: candidate sequences have inconsistent lengths");

  AtvModel model;
  model.steps.reserve(N);
  if (diags) diags->clear();
  for (int k = 0; k < N; ++k) {
    const DynTuple zbar{candidate_states[k], candidate_inputs[k], predicted_next[k]};
    FitDiagnostics d;
    GammaTriple gamma;
    try {
      gamma = fit_local_model(ds, zbar, metric, cfg, &d);
    } catch (const DegenerateDataError& e) {
      throw DegenerateDataError(std::string(e.what()) + " at horizon step " + std::to_string(k),
                                k);
    }
    const KinematicRows kin =
        linearize_kinematics(candidate_states[k], candidate_inputs[k], params, track);
    model.steps.push_back(assemble_atv_step(gamma, kin));
    if (diags) diags->push_back(d);
  }
  return model;
}

std::vector<AtvStep> fit_lap_models(std::span<const VehicleState> states,
                                    std::span<const ControlInput> inputs,
                                    const VehicleParams& params, const Track& track,
                                    const TupleMetric& metric, const LocalFitConfig& cfg) {
  const int T = static_cast<int>(inputs.size());
  if (static_cast<int>(states.size()) != T + 1)
    throw DimensionError("fit_lap_models: states/inputs lengths inconsistent");

  std::vector<DynTuple> lap;
  lap.reserve(T);
  for (int t = 0; t < T; ++t) lap.push_back({states[t], inputs[t], states[t + 1]});

  LocalFitConfig local = cfg;
  local.P = std::min(cfg.P, T);

  std::vector<AtvStep> out;
  out.reserve(T);
  std::vector<double> d_all(T);
  std::vector<int> order(T);
  for (int t = 0; t < T; ++t) {
    const Vec11 q = lap[t].coords();
    for (int i = 0; i < T; ++i) d_all[i] = metric.dist_sq(q, lap[i].coords());
    for (int i = 0; i < T; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (d_all[a] != d_all[b]) return d_all[a] < d_all[b];
      return a < b;
    });

    std::vector<DynTuple> sel;
    std::vector<double> sel_d;
    sel.reserve(local.P);
    sel_d.reserve(local.P);
    for (int i = 0; i < local.P; ++i) {
      sel.push_back(lap[order[i]]);
      sel_d.push_back(d_all[order[i]]);
    }
    const GammaTriple gamma = fit_from_tuples(sel, sel_d, local);
    const KinematicRows kin = linearize_kinematics(states[t], inputs[t], params, track);
    out.push_back(assemble_atv_step(gamma, kin));
  }
  return out;
}

}  // namespace mmlmpc
