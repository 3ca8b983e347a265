#pragma once

#include <Eigen/Dense>

#include "mmlmpc/errors.hpp"

namespace mmlmpc {

/// Dense convex QP:
///   min 0.5 z' H z + f' z   s.t.  A_eq z = b_eq,  A_in z <= b_in.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
  double objective_constant = 0.0;

  int n() const { return static_cast<int>(H.rows()); }
  void validate() const;
};

enum class QpStatus { Optimal, MaxIter, Infeasible };

struct QpSolution {
  Eigen::VectorXd primal;
  Eigen::VectorXd dual_eq;  // free sign
  Eigen::VectorXd dual_in;  // >= 0 at optimality
  QpStatus status = QpStatus::MaxIter;
  double objective = 0.0;
  int iterations = 0;
};

struct QpSettings {
  double tol_abs = 1e-7;
  double tol_rel = 1e-7;
  int max_iter = 20000;
  double rho = 0.1;          // base ADMM penalty (equality rows get 1e3x)
  double sigma = 1e-6;
  double alpha = 1.6;        // over-relaxation
  int check_interval = 25;
  bool polish = true;
  double eps_infeasible = 1e-9;
  double kkt_gate = 1e-5;    // Optimal only if max KKT residual is below this
  int scaling_iters = 10;    // Ruiz equilibration sweeps
};

struct QpWarmStart {
  Eigen::VectorXd primal;                 // n
  Eigen::VectorXd dual_eq, dual_in;       // me, mi
};

QpSolution solve_qp(const QpProblem& qp, const QpSettings& settings = {},
                    const QpWarmStart* warm = nullptr);

struct KktResiduals {
  double stationarity = 0.0;
  double primal_eq = 0.0;
  double primal_in = 0.0;
  double dual_in = 0.0;
  double complementarity = 0.0;
  double max_residual() const;
};

/// Independently recomputed KKT residuals of a candidate solution.
KktResiduals kkt_residuals(const QpProblem& qp, const QpSolution& sol);

}  // namespace mmlmpc
