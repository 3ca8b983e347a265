#include "mmlmpc/vehicle.hpp"

#include <cmath>

namespace mmlmpc {

void VehicleParams::validate() const {
  if (mass <= 0 || Iz <= 0 || lf <= 0 || lr <= 0 || tire_B <= 0 || tire_C <= 0 ||
      tire_D <= 0 || dt <= 0 || n_substeps < 1 || vx_floor <= 0)
    throw ConfigError("all vehicle parameters must be strictly positive");
}

SlipAngles slip_angles(const VehicleState& x, const ControlInput& u, const VehicleParams& p) {
  if (x.vx <= p.vx_floor)
    throw SingularityError("vx at or below slip-angle floor");
  SlipAngles sa;
  sa.front = u.delta - std::atan((x.vy + p.lf * x.wz) / x.vx);
  sa.rear = -std::atan((x.vy - p.lr * x.wz) / x.vx);
  return sa;
}

double lateral_force(double mu, double fz, double alpha, const VehicleParams& p) {
  return mu * fz * p.tire_D * std::sin(p.tire_C * std::atan(p.tire_B * alpha));
}

namespace {

// Continuous-time derivative with friction mu and curvature kappa held fixed.
Vec6 rhs(const VehicleState& x, const ControlInput& u, const VehicleParams& p, double mu,
         double kappa) {
  const double denom = 1.0 - kappa * x.e_y;
  if (denom <= 0.0)
    throw SingularityError("vehicle at or beyond curvature center (1 - kappa*e_y <= 0)");

  const SlipAngles sa = slip_angles(x, u, p);
  const double fzf = p.mass * kGravity * p.lr / (p.lf + p.lr);
  const double fzr = p.mass * kGravity * p.lf / (p.lf + p.lr);
  const double fyf = lateral_force(mu, fzf, sa.front, p);
  const double fyr = lateral_force(mu, fzr, sa.rear, p);

  const double s_dot = (x.vx * std::cos(x.e_psi) - x.vy * std::sin(x.e_psi)) / denom;

  Vec6 dx;
  dx[0] = u.a - fyf * std::sin(u.delta) / p.mass + x.wz * x.vy;
  dx[1] = (fyf * std::cos(u.delta) + fyr) / p.mass - x.wz * x.vx;
  dx[2] = (p.lf * fyf * std::cos(u.delta) - p.lr * fyr) / p.Iz;
  dx[3] = x.wz - kappa * s_dot;
  dx[4] = s_dot;
  dx[5] = x.vx * std::sin(x.e_psi) + x.vy * std::cos(x.e_psi);
  return dx;
}

}  // namespace

VehicleState step_true(const VehicleState& x, const ControlInput& u, const VehicleParams& p,
                       const Track& track, const FrictionMap& map) {
  const double h = p.dt / p.n_substeps;
  VehicleState cur = x;
  for (int i = 0; i < p.n_substeps; ++i) {
    const double mu = map.friction_at(cur.s);
    const double kappa = track.curvature_at(cur.s);
    const Vec6 k1 = rhs(cur, u, p, mu, kappa);
    const VehicleState mid = VehicleState::from_vec(cur.to_vec() + 0.5 * h * k1);
    const Vec6 k2 = rhs(mid, u, p, mu, kappa);
    cur = VehicleState::from_vec(cur.to_vec() + h * k2);
  }
  return cur;
}

bool lap_done(const VehicleState& x, const Track& track) {
  return x.s >= track.total_length();
}

}  // namespace mmlmpc
