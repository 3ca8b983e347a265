#pragma once

#include "mmlmpc/track.hpp"
#include "mmlmpc/types.hpp"

namespace mmlmpc {

/// Physical parameters of the planar dynamic bicycle model.
/// Defaults are a 1/10-scale car set; all values are scenario-configurable.
struct VehicleParams {
  double mass = 1.98;    // [kg]
  double Iz = 0.024;     // yaw inertia [kg m^2]
  double lf = 0.125;     // CG to front axle [m]
  double lr = 0.125;     // CG to rear axle [m]
  double tire_B = 6.9;   // Pacejka stiffness factor
  double tire_C = 1.8;   // Pacejka shape factor
  double tire_D = 1.0;   // Pacejka peak factor
  double dt = 0.1;       // control/step interval [s]
  int n_substeps = 10;   // RK2 substeps per step (yaw dynamics are stiff)
  double vx_floor = 0.1; // slip-angle singularity guard [m/s]

  void validate() const;
};

inline constexpr double kGravity = 9.81;

struct SlipAngles {
  double front = 0.0;  // [rad]
  double rear = 0.0;   // [rad]
};

/// Front/rear tire slip angles. Requires vx > params.vx_floor.
SlipAngles slip_angles(const VehicleState& x, const ControlInput& u, const VehicleParams& p);

/// Pacejka-style lateral tire force: mu * Fz * D * sin(C * atan(B * alpha)).
double lateral_force(double mu, double fz, double alpha, const VehicleParams& p);

/// One step of the ground-truth nonlinear plant: p.n_substeps RK2 (midpoint)
/// substeps of p.dt / p.n_substeps, friction and curvature sampled at each
/// substep's initial s. Throws SingularityError when vx drops to the floor
/// or 1 - kappa*e_y <= 0.
VehicleState step_true(const VehicleState& x, const ControlInput& u, const VehicleParams& p,
                       const Track& track, const FrictionMap& map);

/// Iteration-completion predicate: true iff s has reached one lap.
bool lap_done(const VehicleState& x, const Track& track);

}  // namespace mmlmpc
