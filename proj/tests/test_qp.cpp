#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mmlmpc/qp.hpp"
#include "oracles.hpp"

using namespace mmlmpc;

namespace {

QpProblem empty_eq(int n) {
  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(n, n);
  qp.f = Eigen::VectorXd::Zero(n);
  qp.A_eq = Eigen::MatrixXd::Zero(0, n);
  qp.b_eq = Eigen::VectorXd::Zero(0);
  qp.A_in = Eigen::MatrixXd::Zero(0, n);
  qp.b_in = Eigen::VectorXd::Zero(0);
  return qp;
}

}  // namespace

TEST_CASE("textbook: min x^2 subject to x >= 1") {
  QpProblem qp = empty_eq(1);
  qp.H << 2.0;
  qp.A_in = Eigen::MatrixXd::Constant(1, 1, -1.0);
  qp.b_in = Eigen::VectorXd::Constant(1, -1.0);

  const QpSolution sol = solve_qp(qp);
  REQUIRE(sol.status == QpStatus::Optimal);
  CHECK(sol.primal[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(kkt_residuals(qp, sol).max_residual() <= 1e-5);
}

TEST_CASE("hand-derived equality QP: min (x-2)^2 + (y-1)^2 s.t. x + y = 1") {
  // KKT by hand: 2(x-2) + nu = 0, 2(y-1) + nu = 0, x + y = 1
  //   => x - 2 = y - 1 => x = y + 1 => (x*, y*) = (1, 0), objective 2.
  QpProblem qp = empty_eq(2);
  qp.H = 2.0 * Eigen::MatrixXd::Identity(2, 2);
  qp.f << -4.0, -2.0;
  qp.objective_constant = 5.0;
  qp.A_eq = Eigen::MatrixXd::Ones(1, 2);
  qp.b_eq = Eigen::VectorXd::Ones(1);

  const QpSolution sol = solve_qp(qp);
  REQUIRE(sol.status == QpStatus::Optimal);
  CHECK(sol.primal[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(sol.primal[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-7));
  CHECK(sol.objective == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("random strictly convex QPs match active-set enumeration within 1e-5") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  std::uniform_int_distribution<int> nd(2, 10), md(1, 8);

  for (int instance = 0; instance < 100; ++instance) {
    const int n = nd(rng), m = md(rng);
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) M(i, j) = u01(rng);
    QpProblem qp = empty_eq(n);
    qp.H = M.transpose() * M + Eigen::MatrixXd::Identity(n, n);
    for (int i = 0; i < n; ++i) qp.f[i] = 2.0 * u01(rng);
    qp.A_in.resize(m, n);
    qp.b_in.resize(m);
    Eigen::VectorXd feas(n);
    for (int i = 0; i < n; ++i) feas[i] = u01(rng);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) qp.A_in(i, j) = u01(rng);
      qp.b_in[i] = qp.A_in.row(i).dot(feas) + 0.7 * std::abs(u01(rng));  // keep it feasible
    }

    const Eigen::VectorXd expect =
        oracles::active_set_enumeration(qp.H, qp.f, qp.A_in, qp.b_in);
    REQUIRE(expect.size() == n);

    const QpSolution sol = solve_qp(qp);
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK((sol.primal - expect).cwiseAbs().maxCoeff() <= 1e-5);
    CHECK(kkt_residuals(qp, sol).max_residual() <= 1e-5);
  }
}

TEST_CASE("solver determinism: identical problems give identical solutions") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  const int n = 8, m = 6;
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = u01(rng);
  QpProblem qp = empty_eq(n);
  qp.H = M.transpose() * M + 0.5 * Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) qp.f[i] = u01(rng);
  qp.A_in.resize(m, n);
  qp.b_in.resize(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) qp.A_in(i, j) = u01(rng);
    qp.b_in[i] = 0.5;
  }
  const QpSolution a = solve_qp(qp);
  const QpSolution b = solve_qp(qp);
  CHECK(a.status == b.status);
  CHECK(a.iterations == b.iterations);
  CHECK(a.primal == b.primal);  // bitwise
  CHECK(a.dual_in == b.dual_in);
  CHECK(a.objective == b.objective);
}

TEST_CASE("primal infeasibility is certified") {
  QpProblem qp = empty_eq(1);
  qp.H << 2.0;
  qp.A_in.resize(2, 1);
  qp.b_in.resize(2);
  qp.A_in << -1.0, 1.0;  // x >= 1 and x <= 0
  qp.b_in << -1.0, 0.0;
  const QpSolution sol = solve_qp(qp);
  CHECK(sol.status == QpStatus::Infeasible);
}

TEST_CASE("warm start keeps optimality") {
  QpProblem qp = empty_eq(3);
  qp.H = 2.0 * Eigen::MatrixXd::Identity(3, 3);
  qp.f << -1.0, 2.0, -3.0;
  qp.A_in.resize(3, 3);
  qp.A_in.setIdentity();
  qp.b_in = Eigen::VectorXd::Constant(3, 0.5);

  const QpSolution cold = solve_qp(qp);
  REQUIRE(cold.status == QpStatus::Optimal);

  QpWarmStart warm{cold.primal, cold.dual_eq, cold.dual_in};
  QpProblem nudged = qp;
  nudged.f[0] = -1.05;
  const QpSolution hot = solve_qp(nudged, {}, &warm);
  REQUIRE(hot.status == QpStatus::Optimal);
  CHECK(kkt_residuals(nudged, hot).max_residual() <= 1e-5);
  CHECK(hot.primal[0] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("iteration cap reports MaxIter") {
  QpProblem qp = empty_eq(4);
  qp.H = 2.0 * Eigen::MatrixXd::Identity(4, 4);
  qp.f << 1.0, -2.0, 0.5, -0.25;
  qp.A_in.resize(4, 4);
  qp.A_in.setIdentity();
  qp.b_in.setConstant(4, 0.1);
  QpSettings st;
  st.max_iter = 2;
  st.check_interval = 1;
  st.polish = false;
  const QpSolution sol = solve_qp(qp, st);
  CHECK(sol.status == QpStatus::MaxIter);
}

TEST_CASE("dimension validation") {
  QpProblem qp = empty_eq(3);
  qp.f.resize(2);
  CHECK_THROWS_AS(solve_qp(qp), DimensionError);
}
