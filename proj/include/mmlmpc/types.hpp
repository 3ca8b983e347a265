#pragma once

#include <algorithm>

#include <Eigen/Dense>

namespace mmlmpc {

inline constexpr int kStateDim = 6;
inline constexpr int kInputDim = 2;
inline constexpr int kTupleDim = 11;  // state (6) + input (2) + successor velocities (3)

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, kStateDim, 1>;
using Vec11 = Eigen::Matrix<double, kTupleDim, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat6 = Eigen::Matrix<double, kStateDim, kStateDim>;
using Mat62 = Eigen::Matrix<double, kStateDim, kInputDim>;
using Mat11 = Eigen::Matrix<double, kTupleDim, kTupleDim>;

/// Frenet-frame state of the dynamic bicycle model.
/// Ordering everywhere in this library: [vx, vy, wz, e_psi, s, e_y].
struct VehicleState {
  double vx = 0.0;     // longitudinal velocity [m/s]
  double vy = 0.0;     // lateral velocity [m/s]
  double wz = 0.0;     // yaw rate [rad/s]
  double e_psi = 0.0;  // heading error vs path tangent [rad]
  double s = 0.0;      // arc-length progress [m]
  double e_y = 0.0;    // signed lateral deviation [m]

  Vec6 to_vec() const {
    Vec6 v;
    v << vx, vy, wz, e_psi, s, e_y;
    return v;
  }
  static VehicleState from_vec(const Vec6& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }
};

struct ControlInput {
  double a = 0.0;      // longitudinal acceleration command [m/s^2]
  double delta = 0.0;  // steering angle [rad]

  Vec2 to_vec() const { return Vec2(a, delta); }
  static ControlInput from_vec(const Vec2& v) { return {v[0], v[1]}; }
};

/// Box input constraint set.
struct InputBounds {
  double a_min = -2.0;
  double a_max = 2.0;
  double delta_min = -0.5;
  double delta_max = 0.5;

  ControlInput clamp(const ControlInput& u) const {
    return {std::clamp(u.a, a_min, a_max), std::clamp(u.delta, delta_min, delta_max)};
  }
  bool contains(const ControlInput& u, double tol = 1e-9) const {
    return u.a >= a_min - tol && u.a <= a_max + tol && u.delta >= delta_min - tol &&
           u.delta <= delta_max + tol;
  }
};

/// One step of an affine time-varying model: x+ = A x + B u + g.
struct AtvStep {
  Mat6 A = Mat6::Zero();
  Mat62 B = Mat62::Zero();
  Vec6 g = Vec6::Zero();

  Vec6 apply(const Vec6& x, const Vec2& u) const { return A * x + B * u + g; }
};

}  // namespace mmlmpc
