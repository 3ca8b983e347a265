#pragma once

#include <span>
#include <vector>

#include "mmlmpc/datastore.hpp"
#include "mmlmpc/vehicle.hpp"

namespace mmlmpc {

/// Epanechnikov kernel: (3/4)(1 - u^2) for |u| < 1, zero elsewhere.
double epanechnikov(double u);

/// Regression coefficients for the three velocity states. Each 5-vector is
/// [coef vx, coef vy, coef wz, coef input, affine offset]; the input column
/// is the acceleration for the vx row and the steering angle for vy and wz.
struct GammaTriple {
  Eigen::Matrix<double, 5, 1> gamma_vx = Eigen::Matrix<double, 5, 1>::Zero();
  Eigen::Matrix<double, 5, 1> gamma_vy = Eigen::Matrix<double, 5, 1>::Zero();
  Eigen::Matrix<double, 5, 1> gamma_wz = Eigen::Matrix<double, 5, 1>::Zero();
};

/// Horizon-indexed affine time-varying model.
struct AtvModel {
  std::vector<AtvStep> steps;
  int horizon() const { return static_cast<int>(steps.size()); }
};

struct LocalFitConfig {
  int P = 40;               // neighbor count
  double eta = 0.0;         // kernel bandwidth (squared-distance units); 0 = adaptive
  double eta_scale = 1.01;  // adaptive bandwidth = P-th neighbor distance^2 * eta_scale
  double ridge = 1e-6;      // Tikhonov term on the normal equations
  int min_effective = 6;    // minimum neighbors with nonzero kernel weight
  double max_condition = 1e12;
};

struct FitDiagnostics {
  int n_neighbors = 0;
  int n_effective = 0;
  double condition = 0.0;
  double eta = 0.0;
  double weight_sum = 0.0;
};

/// Kernel-weighted least squares over explicit neighbor tuples with their
/// squared metric distances to the query. Throws DegenerateDataError when
/// fewer than cfg.min_effective weights are nonzero or the regularized
/// normal matrix is numerically singular.
GammaTriple fit_from_tuples(std::span<const DynTuple> tuples, std::span<const double> dist_sq,
                            const LocalFitConfig& cfg, FitDiagnostics* diag = nullptr);

/// Local model at zbar: P-nearest z-tuples from the data set, Epanechnikov
/// weights on squared distance over bandwidth, weighted LS per velocity row.
GammaTriple fit_local_model(const DataSet& ds, const DynTuple& zbar, const TupleMetric& metric,
                            const LocalFitConfig& cfg, FitDiagnostics* diag = nullptr);

/// Rows of the linearized kinematic update for (e_psi, s, e_y).
struct KinematicRows {
  Eigen::Matrix<double, 3, 6> A = Eigen::Matrix<double, 3, 6>::Zero();
  Eigen::Matrix<double, 3, 2> B = Eigen::Matrix<double, 3, 2>::Zero();
  Vec3 g = Vec3::Zero();
};

/// Discrete friction-independent kinematic update (Euler at p.dt): returns
/// next (e_psi, s, e_y) with curvature frozen at kappa.
Vec3 kinematics_f1(const VehicleState& x, const VehicleParams& p, double kappa);

/// Exact Jacobian of kinematics_f1 at (x, u), affine offset chosen so the
/// model reproduces kinematics_f1(x) exactly at the linearization point.
KinematicRows linearize_kinematics(const VehicleState& x, const ControlInput& u,
                                   const VehicleParams& p, const Track& track);

/// Velocity rows from the regression, kinematic rows from the analytic
/// linearization, laid out over the full 6-state.
AtvStep assemble_atv_step(const GammaTriple& gamma, const KinematicRows& kin);

/// Horizon-long ATV model along a candidate trajectory. For step k the query
/// tuple is (candidate_states[k], candidate_inputs[k], predicted_next[k]).
/// DegenerateDataError carries the failing step index.
AtvModel build_atv(const DataSet& ds, std::span<const VehicleState> candidate_states,
                   std::span<const ControlInput> candidate_inputs,
                   std::span<const VehicleState> predicted_next, const VehicleParams& params,
                   const Track& track, const TupleMetric& metric, const LocalFitConfig& cfg,
                   std::vector<FitDiagnostics>* diags = nullptr);

/// Post-hoc per-step models for one completed lap, fitted from the lap's own
/// tuples only (used when storing an iteration).
std::vector<AtvStep> fit_lap_models(std::span<const VehicleState> states,
                                    std::span<const ControlInput> inputs,
                                    const VehicleParams& params, const Track& track,
                                    const TupleMetric& metric, const LocalFitConfig& cfg);

}  // namespace mmlmpc
