#include "mmlmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace mmlmpc {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void QpProblem::validate() const {
  const int nv = n();
  if (H.rows() != H.cols()) throw DimensionError("H must be square");
  if (f.size() != nv) throw DimensionError("f size mismatch");
  if (A_eq.rows() != b_eq.size()) throw DimensionError("A_eq/b_eq mismatch");
  if (A_in.rows() != b_in.size()) throw DimensionError("A_in/b_in mismatch");
  if (A_eq.rows() > 0 && A_eq.cols() != nv) throw DimensionError("A_eq column mismatch");
  if (A_in.rows() > 0 && A_in.cols() != nv) throw DimensionError("A_in column mismatch");
}

double KktResiduals::max_residual() const {
  return std::max({stationarity, primal_eq, primal_in, dual_in, complementarity});
}

KktResiduals kkt_residuals(const QpProblem& qp, const QpSolution& sol) {
  KktResiduals r;
  const int me = static_cast<int>(qp.A_eq.rows());
  const int mi = static_cast<int>(qp.A_in.rows());

  const Eigen::MatrixXd Hs = 0.5 * (qp.H + qp.H.transpose());
  Eigen::VectorXd grad = Hs * sol.primal + qp.f;
  if (me > 0) grad += qp.A_eq.transpose() * sol.dual_eq;
  if (mi > 0) grad += qp.A_in.transpose() * sol.dual_in;
  r.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;

  if (me > 0) r.primal_eq = (qp.A_eq * sol.primal - qp.b_eq).cwiseAbs().maxCoeff();
  if (mi > 0) {
    const Eigen::VectorXd slack = qp.A_in * sol.primal - qp.b_in;
    r.primal_in = std::max(0.0, slack.maxCoeff());
    r.dual_in = std::max(0.0, -sol.dual_in.minCoeff());
    r.complementarity = sol.dual_in.cwiseProduct(slack).cwiseAbs().maxCoeff();
  }
  return r;
}

namespace {

struct Scaling {
  Eigen::VectorXd D;  // variable scaling, size n
  Eigen::VectorXd E;  // constraint scaling, size m
  double c = 1.0;     // cost scaling
};

// Modified Ruiz equilibration of the KKT block [[H, C'], [C, 0]].
Scaling ruiz_equilibrate(Eigen::MatrixXd& H, Eigen::VectorXd& f, Eigen::MatrixXd& C,
                         Eigen::VectorXd& l, Eigen::VectorXd& u, int sweeps) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(C.rows());
  Scaling sc;
  sc.D = Eigen::VectorXd::Ones(n);
  sc.E = Eigen::VectorXd::Ones(m);

  auto safe_scale = [](double norm) {
    if (norm < 1e-12 || !std::isfinite(norm)) return 1.0;
    return 1.0 / std::sqrt(norm);
  };

  for (int it = 0; it < sweeps; ++it) {
    Eigen::VectorXd d(n), e(m);
    for (int j = 0; j < n; ++j) {
      double norm = H.col(j).cwiseAbs().maxCoeff();
      if (m > 0) norm = std::max(norm, C.col(j).cwiseAbs().maxCoeff());
      d[j] = safe_scale(norm);
    }
    for (int i = 0; i < m; ++i) e[i] = safe_scale(C.row(i).cwiseAbs().maxCoeff());

    H = d.asDiagonal() * H * d.asDiagonal();
    f = f.cwiseProduct(d);
    if (m > 0) {
      C = e.asDiagonal() * C * d.asDiagonal();
      for (int i = 0; i < m; ++i) {
        if (std::isfinite(l[i])) l[i] *= e[i];
        u[i] *= e[i];
      }
    }
    sc.D = sc.D.cwiseProduct(d);
    sc.E = sc.E.cwiseProduct(e);
  }

  // Cost normalization.
  double h_norm = 0.0;
  for (int j = 0; j < n; ++j) h_norm += H.col(j).cwiseAbs().maxCoeff();
  h_norm = (n > 0) ? h_norm / n : 0.0;
  const double f_norm = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
  const double denom = std::max(h_norm, f_norm);
  sc.c = (denom > 1e-12) ? 1.0 / denom : 1.0;
  H *= sc.c;
  f *= sc.c;
  return sc;
}

struct AdmmWork {
  Eigen::MatrixXd H;  // scaled, symmetrized
  Eigen::VectorXd f;
  Eigen::MatrixXd C;  // scaled [A_eq; A_in]
  Eigen::VectorXd l, u;
  Eigen::VectorXd rho;  // per-row penalty
  Eigen::LDLT<Eigen::MatrixXd> kkt;
  int n = 0, m = 0, me = 0;

  void factorize(double sigma) {
    Eigen::MatrixXd K = H;
    K.diagonal().array() += sigma;
    if (m > 0) K.noalias() += C.transpose() * rho.asDiagonal() * C;
    kkt.compute(K);
  }
};

}  // namespace

QpSolution solve_qp(const QpProblem& qp, const QpSettings& st, const QpWarmStart* warm) {
  qp.validate();
  const int n = qp.n();
  const int me = static_cast<int>(qp.A_eq.rows());
  const int mi = static_cast<int>(qp.A_in.rows());
  const int m = me + mi;

  AdmmWork w;
  w.n = n;
  w.m = m;
  w.me = me;
  w.H = 0.5 * (qp.H + qp.H.transpose());
  w.f = qp.f;
  w.C.resize(m, n);
  w.l.resize(m);
  w.u.resize(m);
  if (me > 0) {
    w.C.topRows(me) = qp.A_eq;
    w.l.head(me) = qp.b_eq;
    w.u.head(me) = qp.b_eq;
  }
  if (mi > 0) {
    w.C.bottomRows(mi) = qp.A_in;
    w.l.tail(mi).setConstant(-kInf);
    w.u.tail(mi) = qp.b_in;
  }

  const Scaling sc = ruiz_equilibrate(w.H, w.f, w.C, w.l, w.u, st.scaling_iters);

  double rho_base = st.rho;
  auto set_rho = [&]() {
    w.rho.resize(m);
    for (int i = 0; i < m; ++i) w.rho[i] = (i < me) ? 1e3 * rho_base : rho_base;
  };
  set_rho();
  w.factorize(st.sigma);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  if (warm) {
    if (warm->primal.size() == n) x = sc.D.cwiseInverse().cwiseProduct(warm->primal);
    if (warm->dual_eq.size() == me && warm->dual_in.size() == mi && m > 0) {
      Eigen::VectorXd yw(m);
      if (me > 0) yw.head(me) = warm->dual_eq;
      if (mi > 0) yw.tail(mi) = warm->dual_in;
      y = sc.c * sc.E.cwiseInverse().cwiseProduct(yw);
    }
    if (m > 0) z = (w.C * x).cwiseMax(w.l).cwiseMin(w.u);
  }

  // Unscaled views for convergence checks.
  auto unscale_x = [&](const Eigen::VectorXd& xs) { return sc.D.cwiseProduct(xs).eval(); };
  auto unscale_y = [&](const Eigen::VectorXd& ys) {
    return (sc.E.cwiseProduct(ys) / sc.c).eval();
  };

  QpSolution sol;
  sol.status = QpStatus::MaxIter;
  int iter = 0;
  bool converged = false;

  Eigen::VectorXd x_prev_check = x, y_prev_check = y;
  int refactor_count = 0;

  for (iter = 1; iter <= st.max_iter; ++iter) {
    // x update.
    Eigen::VectorXd rhs = st.sigma * x - w.f;
    if (m > 0) rhs.noalias() += w.C.transpose() * (w.rho.cwiseProduct(z) - y);
    const Eigen::VectorXd x_tilde = w.kkt.solve(rhs);
    Eigen::VectorXd z_tilde(m);
    if (m > 0) z_tilde.noalias() = w.C * x_tilde;

    const Eigen::VectorXd x_next = st.alpha * x_tilde + (1.0 - st.alpha) * x;
    Eigen::VectorXd z_next(m), y_next(m);
    if (m > 0) {
      const Eigen::VectorXd z_relaxed = st.alpha * z_tilde + (1.0 - st.alpha) * z;
      z_next = (z_relaxed + y.cwiseQuotient(w.rho)).cwiseMax(w.l).cwiseMin(w.u);
      y_next = y + w.rho.cwiseProduct(z_relaxed - z_next);
    }
    x = x_next;
    z = z_next;
    y = y_next;

    if (iter % st.check_interval != 0 && iter != st.max_iter) continue;

    // Unscaled residuals.
    const Eigen::VectorXd xu = unscale_x(x);
    const Eigen::VectorXd yu = unscale_y(y);
    Eigen::VectorXd cx(m), zu(m);
    double r_prim = 0.0, prim_scale = 1.0;
    if (m > 0) {
      if (me > 0) cx.head(me) = qp.A_eq * xu;
      if (mi > 0) cx.tail(mi) = qp.A_in * xu;
      zu = sc.E.cwiseInverse().cwiseProduct(z);
      r_prim = (cx - zu).cwiseAbs().maxCoeff();
      prim_scale = std::max({cx.cwiseAbs().maxCoeff(), zu.cwiseAbs().maxCoeff(), 1.0});
    }
    Eigen::VectorXd hx = 0.5 * (qp.H * xu + qp.H.transpose() * xu);
    Eigen::VectorXd cty = Eigen::VectorXd::Zero(n);
    if (me > 0) cty.noalias() += qp.A_eq.transpose() * yu.head(me);
    if (mi > 0) cty.noalias() += qp.A_in.transpose() * yu.tail(mi);
    const double r_dual = (hx + qp.f + cty).cwiseAbs().maxCoeff();
    const double dual_scale = std::max(
        {hx.cwiseAbs().maxCoeff(), qp.f.size() ? qp.f.cwiseAbs().maxCoeff() : 0.0,
         cty.cwiseAbs().maxCoeff(), 1.0});

    if (r_prim <= st.tol_abs + st.tol_rel * prim_scale &&
        r_dual <= st.tol_abs + st.tol_rel * dual_scale) {
      converged = true;
      break;
    }

    // Primal infeasibility certificate from the dual increment.
    if (m > 0) {
      const Eigen::VectorXd dy = y - y_prev_check;
      const double dy_norm = dy.cwiseAbs().maxCoeff();
      if (dy_norm > 1e-14) {
        const Eigen::VectorXd dyn = dy / dy_norm;
        const double cert_a = (w.C.transpose() * dyn).cwiseAbs().maxCoeff();
        double support = 0.0;
        bool valid = true;
        for (int i = 0; i < m; ++i) {
          if (dyn[i] > 0.0) {
            support += w.u[i] * dyn[i];
          } else if (dyn[i] < -st.eps_infeasible) {
            if (!std::isfinite(w.l[i])) {
              valid = false;
              break;
            }
            support += w.l[i] * dyn[i];
          }
        }
        if (valid && cert_a <= st.eps_infeasible && support <= -st.eps_infeasible) {
          sol.status = QpStatus::Infeasible;
          sol.primal = unscale_x(x);
          sol.dual_eq = unscale_y(y).head(me);
          sol.dual_in = unscale_y(y).tail(mi);
          sol.iterations = iter;
          sol.objective = 0.0;
          return sol;
        }
      }
      x_prev_check = x;
      y_prev_check = y;

      // Adaptive penalty (scaled residual balance).
      const double rp_s = (w.C * x - z).cwiseAbs().maxCoeff() /
                          std::max({(w.C * x).cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff(), 1e-10});
      Eigen::VectorXd grad_s = w.H * x + w.f + w.C.transpose() * y;
      const double rd_s = grad_s.cwiseAbs().maxCoeff() /
                          std::max({(w.H * x).cwiseAbs().maxCoeff(), w.f.cwiseAbs().maxCoeff(),
                                    (w.C.transpose() * y).cwiseAbs().maxCoeff(), 1e-10});
      const double ratio = std::sqrt(rp_s / std::max(rd_s, 1e-16));
      if ((ratio > 5.0 || ratio < 0.2) && refactor_count < 50) {
        rho_base = std::clamp(rho_base * ratio, 1e-6, 1e6);
        set_rho();
        w.factorize(st.sigma);
        ++refactor_count;
      }
    }
  }

  sol.iterations = std::min(iter, st.max_iter);
  sol.primal = unscale_x(x);
  Eigen::VectorXd yu = unscale_y(y);
  sol.dual_eq = (me > 0) ? yu.head(me).eval() : Eigen::VectorXd(0);
  sol.dual_in = (mi > 0) ? yu.tail(mi).cwiseMax(0.0).eval() : Eigen::VectorXd(0);

  // Polish: nullspace re-solve on the active set taken as equalities, with a
  // few active-set correction rounds (add violated rows, drop wrong-sign
  // duals). Falls back to the ADMM iterate whenever a round goes bad. Also
  // attempted when the iteration budget ran out: the active set is usually
  // settled long before the duals reach full precision.
  if (st.polish) {
    const Eigen::MatrixXd Hs0 = 0.5 * (qp.H + qp.H.transpose());
    std::vector<char> mask(mi, 0);
    const double y_scale = (m > 0) ? std::max(1.0, y.cwiseAbs().maxCoeff()) : 1.0;
    for (int i = 0; i < mi; ++i) {
      const bool dual_on = y[me + i] > 1e-9 * y_scale;
      const bool at_bound =
          z[me + i] >= w.u[me + i] - 1e-9 * std::max(1.0, std::abs(w.u[me + i]));
      mask[i] = (dual_on || at_bound) ? 1 : 0;
    }

    QpSolution pol = sol;
    double best_residual = std::numeric_limits<double>::infinity();
    for (int round = 0; round < 60; ++round) {
      std::vector<int> active;
      for (int i = 0; i < mi; ++i)
        if (mask[i]) active.push_back(i);
      const int ma = me + static_cast<int>(active.size());
      Eigen::MatrixXd Ca(ma, n);
      Eigen::VectorXd ba(ma);
      if (me > 0) {
        Ca.topRows(me) = qp.A_eq;
        ba.head(me) = qp.b_eq;
      }
      for (std::size_t i = 0; i < active.size(); ++i) {
        Ca.row(me + i) = qp.A_in.row(active[i]);
        ba[me + i] = qp.b_in[active[i]];
      }

      Eigen::VectorXd x_pol = Eigen::VectorXd::Zero(n);
      int rank = 0;
      std::optional<Eigen::ColPivHouseholderQR<Eigen::MatrixXd>> qrt;
      if (ma > 0) {
        qrt.emplace(Ca.transpose());
        qrt->setThreshold(1e-10);
        rank = static_cast<int>(qrt->rank());
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Ca);
        cod.setThreshold(1e-10);
        x_pol = cod.solve(ba);  // min-norm particular solution
        if ((Ca * x_pol - ba).cwiseAbs().maxCoeff() > 1e-8) break;  // inconsistent actives
      }
      if (rank < n) {
        Eigen::MatrixXd Z;
        if (ma > 0) {
          const Eigen::MatrixXd Qfull = qrt->householderQ();
          Z = Qfull.rightCols(n - rank);
        } else {
          Z = Eigen::MatrixXd::Identity(n, n);
        }
        Eigen::MatrixXd Hz = Z.transpose() * Hs0 * Z;
        const double ridge = 1e-12 * std::max(1.0, Hz.cwiseAbs().maxCoeff());
        Hz.diagonal().array() += ridge;
        const Eigen::VectorXd rhs_w = -Z.transpose() * (Hs0 * x_pol + qp.f);
        x_pol += Z * Hz.ldlt().solve(rhs_w);
      }

      Eigen::VectorXd y_pol = Eigen::VectorXd::Zero(ma);
      if (ma > 0) y_pol = qrt->solve(-(Hs0 * x_pol + qp.f));

      // Keep the best candidate seen: degenerate active sets can cycle.
      QpSolution cand = sol;
      cand.primal = x_pol;
      cand.dual_eq = (me > 0) ? y_pol.head(me).eval() : Eigen::VectorXd(0);
      cand.dual_in = Eigen::VectorXd::Zero(mi);
      for (std::size_t i = 0; i < active.size(); ++i)
        cand.dual_in[active[i]] = std::max(0.0, y_pol[me + i]);
      const double cand_residual = kkt_residuals(qp, cand).max_residual();
      if (cand_residual < best_residual) {
        best_residual = cand_residual;
        pol = std::move(cand);
      }

      // One change per round keeps the active set consistent; Bland's rule
      // (lowest eligible index) prevents cycling at degenerate vertices.
      bool changed = false;
      for (std::size_t i = 0; i < active.size() && !changed; ++i) {
        if (y_pol[me + i] < -1e-9) {
          mask[active[i]] = 0;
          changed = true;
        }
      }
      if (!changed && mi > 0) {
        const Eigen::VectorXd slack = qp.A_in * x_pol - qp.b_in;
        for (int i = 0; i < mi && !changed; ++i) {
          if (!mask[i] && slack[i] > 1e-9 * std::max(1.0, std::abs(qp.b_in[i]))) {
            mask[i] = 1;
            changed = true;
          }
        }
      }
      if (!changed) break;  // settled
    }
    if (best_residual <= kkt_residuals(qp, sol).max_residual()) {
      sol.primal = pol.primal;
      sol.dual_eq = pol.dual_eq;
      sol.dual_in = pol.dual_in;
    }
  }

  sol.objective = 0.25 * sol.primal.dot((qp.H + qp.H.transpose()) * sol.primal) +
                  qp.f.dot(sol.primal) + qp.objective_constant;
  sol.status = (kkt_residuals(qp, sol).max_residual() <= st.kkt_gate) ? QpStatus::Optimal
                                                                      : QpStatus::MaxIter;
  return sol;
}

}  // namespace mmlmpc
