#pragma once

// Test-only oracles kept independent of the implementation paths they check:
// plain loops, explicit formulas, exhaustive enumeration.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mmlmpc/datastore.hpp"
#include "mmlmpc/qp.hpp"
#include "mmlmpc/track.hpp"

namespace oracles {

using namespace mmlmpc;

// The canonical test track: two long straights, two short straights, four
// quarter-circle arcs of radius 1 (L-track stand-in, length 14 + 2*pi).
inline Track make_track() {
  const double arc = std::numbers::pi / 2.0;
  return Track({{5.5, 0.0},
                {arc, 1.0},
                {1.5, 0.0},
                {arc, 1.0},
                {5.5, 0.0},
                {arc, 1.0},
                {1.5, 0.0},
                {arc, 1.0}},
               0.4);
}

// Wrapped difference reimplemented locally (kept independent of Track).
inline double wrap_diff(double a, double b, double length) {
  double d = std::fmod(a - b, length);
  if (d < -0.5 * length) d += length;
  if (d >= 0.5 * length) d -= length;
  return d;
}

// Brute-force weighted squared tuple distance with circular s.
inline double tuple_dist_sq(const Vec11& a, const Vec11& b, const Mat11& Q, double length) {
  Vec11 d = a - b;
  d[4] = wrap_diff(a[4], b[4], length);
  return d.dot(Q * d);
}

struct BruteNeighbor {
  int iter_id;
  int t;
  double dist_sq;
};

// Exhaustive scan over every stored tuple, sorted by (distance, iter, t).
inline std::vector<BruteNeighbor> brute_knn_tuples(const DataSet& ds, const DynTuple& query,
                                                   int P, const Mat11& Q) {
  std::vector<BruteNeighbor> all;
  for (const auto& rec : ds.iterations())
    for (int t = 0; t < rec.duration(); ++t)
      all.push_back({rec.iter_id, t,
                     tuple_dist_sq(query.coords(), rec.tuple_at(t).coords(), Q,
                                   ds.track_length())});
  std::sort(all.begin(), all.end(), [](const BruteNeighbor& x, const BruteNeighbor& y) {
    if (x.dist_sq != y.dist_sq) return x.dist_sq < y.dist_sq;
    if (x.iter_id != y.iter_id) return x.iter_id < y.iter_id;
    return x.t < y.t;
  });
  all.resize(P);
  return all;
}

inline double state_dist_sq(const Vec6& a, const Vec6& b, const Mat6& D, double length) {
  Vec6 d = a - b;
  d[4] = wrap_diff(a[4], b[4], length);
  return d.dot(D * d);
}

// Brute-force active-set enumeration for small strictly convex inequality QPs:
//   min 0.5 z'Hz + f'z  s.t.  A z <= b.
// Returns the optimal primal or an empty vector when no KKT point exists.
inline Eigen::VectorXd active_set_enumeration(const Eigen::MatrixXd& H, const Eigen::VectorXd& f,
                                              const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                              double tol = 1e-9) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(A.rows());
  Eigen::VectorXd best;
  double best_obj = std::numeric_limits<double>::infinity();

  for (long mask = 0; mask < (1L << m); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < m; ++i)
      if (mask & (1L << i)) act.push_back(i);
    const int ma = static_cast<int>(act.size());
    if (ma > n) continue;

    Eigen::MatrixXd K(n + ma, n + ma);
    K.setZero();
    K.topLeftCorner(n, n) = H;
    Eigen::VectorXd rhs(n + ma);
    rhs.head(n) = -f;
    for (int i = 0; i < ma; ++i) {
      K.block(n + i, 0, 1, n) = A.row(act[i]);
      K.block(0, n + i, n, 1) = A.row(act[i]).transpose();
      rhs[n + i] = b[act[i]];
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd z = sol.head(n);
    const Eigen::VectorXd mu = sol.tail(ma);

    if (mu.size() > 0 && mu.minCoeff() < -tol) continue;        // dual feasibility
    if (m > 0 && (A * z - b).maxCoeff() > tol) continue;        // primal feasibility
    const double obj = 0.5 * z.dot(H * z) + f.dot(z);
    if (obj < best_obj) {
      best_obj = obj;
      best = z;
    }
  }
  return best;
}

// Central finite differences of a discrete map R^k -> R^j.
template <typename F>
Eigen::MatrixXd finite_difference_jacobian(F&& func, const Eigen::VectorXd& x0, int out_dim,
                                           double h = 1e-6) {
  Eigen::MatrixXd J(out_dim, x0.size());
  for (int j = 0; j < x0.size(); ++j) {
    Eigen::VectorXd xp = x0, xm = x0;
    xp[j] += h;
    xm[j] -= h;
    J.col(j) = (func(xp) - func(xm)) / (2.0 * h);
  }
  return J;
}

// Synthetic two-mode switched linear system over the velocity states:
// [vx,vy,wz]+ = A_m [vx,vy,wz] + B_m [a,delta] + g_m, poses propagated by a
// fixed trivial rule. Mode 2 scales the yaw-response row by 0.667 (a
// grip-like change, entrywise >= 20%). Iterations are closed-loop laps of a
// mode-agnostic PI tracker following shared references, so the state
// trajectories of the two modes overlap while the input/response pattern
// carries the mode.
struct TwoModeSystem {
  Eigen::Matrix3d A1, A2;
  Eigen::Matrix<double, 3, 2> B1, B2;
  Eigen::Vector3d g1, g2;
  double track_length = 20.0;
  double dither = 0.05;

  TwoModeSystem() {
    A1 << 0.90, 0.05, 0.00,
          0.02, 0.80, 0.10,
          0.00, -0.10, 0.75;
    A2 = A1;
    A2.row(2) *= 0.667;
    B1 << 0.10, 0.00,
          0.00, 0.00,
          0.00, 0.15;
    B2 = B1;
    B2(2, 1) *= 0.667;
    g1 = (Eigen::Matrix3d::Identity() - A1) * Eigen::Vector3d(1.2, 0.0, 0.0);
    g2 = g1;
    g2[2] *= 0.667;
  }

  VehicleState step(const VehicleState& x, const ControlInput& u, int mode) const {
    const Eigen::Vector3d vel(x.vx, x.vy, x.wz);
    const Eigen::Vector2d uv(u.a, u.delta);
    const Eigen::Vector3d next = (mode == 1) ? (A1 * vel + B1 * uv + g1).eval()
                                             : (A2 * vel + B2 * uv + g2).eval();
    VehicleState out;
    out.vx = next[0];
    out.vy = next[1];
    out.wz = next[2];
    out.e_psi = 0.9 * x.e_psi;
    out.s = std::fmod(x.s + 0.1 * x.vx, track_length);
    out.e_y = 0.9 * x.e_y;
    return out;
  }

  // One iteration: PI tracking of shared speed/yaw-rate references plus
  // seeded input dither.
  IterationRecord make_iteration(int iter_id, int mode, int T, std::mt19937_64& rng) const {
    std::normal_distribution<double> n01(0.0, 1.0);
    IterationRecord rec;
    rec.iter_id = iter_id;
    rec.feasible = true;
    VehicleState x{1.2 + 0.02 * n01(rng), 0.01 * n01(rng), 0.01 * n01(rng), 0.0, 0.0, 0.0};
    rec.states.push_back(x);
    double int_a = 0.0, int_d = 0.0;
    for (int t = 0; t < T; ++t) {
      const double v_ref = 1.2 + 0.4 * std::sin(2.0 * std::numbers::pi * t / 80.0);
      const double wz_ref = 0.30 + 0.20 * std::sin(2.0 * std::numbers::pi * t / 50.0 + 0.9);
      int_a += v_ref - x.vx;
      int_d += wz_ref - x.wz;
      ControlInput u;
      u.a = 4.0 * (v_ref - x.vx) + 0.6 * int_a + dither * n01(rng);
      u.delta = 4.0 * (wz_ref - x.wz) + 0.8 * int_d + dither * n01(rng);
      rec.inputs.push_back(u);
      x = step(x, u, mode);
      rec.states.push_back(x);
      rec.atv.push_back(AtvStep{});  // placeholder models, not used by the NN tests
    }
    return rec;
  }
};

}  // namespace oracles
