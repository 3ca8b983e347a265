#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mmlmpc/safeset.hpp"
#include "mmlmpc/vehicle.hpp"
#include "oracles.hpp"

using namespace mmlmpc;

namespace {

constexpr double kTrackLen = 20.0;

AtvModel random_model(int N, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  AtvModel m;
  for (int k = 0; k < N; ++k) {
    AtvStep s;
    s.A = 0.3 * Mat6::Random();
    s.A.diagonal().array() += 0.5;
    s.B = 0.2 * Mat62::Random();
    s.g = 0.1 * Vec6::Random();
    m.steps.push_back(s);
  }
  return m;
}

IterationRecord record_with_models(int id, int T, const AtvModel& model, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  IterationRecord rec;
  rec.iter_id = id;
  rec.feasible = true;
  rec.states.push_back({1.0, 0, 0, 0, 0, 0});
  for (int t = 0; t < T; ++t) {
    rec.inputs.push_back({0.2 * u01(rng), 0.1 * u01(rng)});
    rec.states.push_back({1.0 + 0.1 * u01(rng), 0.05 * u01(rng), 0.05 * u01(rng),
                          0.02 * u01(rng), std::fmod(0.1 * (t + 1), kTrackLen),
                          0.05 * u01(rng)});
    rec.atv.push_back(model.steps[t % model.horizon()]);
  }
  return rec;
}

}  // namespace

TEST_CASE("propagate_current: identity, single-step, random oracle") {
  const VehicleState x0{1.0, 0.1, -0.2, 0.05, 3.0, -0.1};

  AtvModel identity;
  for (int k = 0; k < 4; ++k) {
    AtvStep s;
    s.A.setIdentity();
    identity.steps.push_back(s);
  }
  const std::vector<ControlInput> zeros(4, ControlInput{});
  const auto constant = propagate_current(identity, x0, zeros);
  REQUIRE(constant.size() == 5);
  for (const auto& x : constant) CHECK(x.to_vec() == x0.to_vec());

  std::mt19937_64 rng(1);
  const AtvModel one = random_model(1, rng);
  const std::vector<ControlInput> u1{{0.3, -0.1}};
  const auto single = propagate_current(one, x0, u1);
  const Vec6 byhand = one.steps[0].A * x0.to_vec() + one.steps[0].B * u1[0].to_vec() +
                      one.steps[0].g;
  CHECK((single[1].to_vec() - byhand).cwiseAbs().maxCoeff() <= 1e-15);

  for (int trial = 0; trial < 50; ++trial) {
    const AtvModel m = random_model(6, rng);
    std::vector<ControlInput> inputs;
    std::uniform_real_distribution<double> u01(-1.0, 1.0);
    for (int k = 0; k < 6; ++k) inputs.push_back({u01(rng), 0.3 * u01(rng)});
    const auto got = propagate_current(m, x0, inputs);
    Vec6 x = x0.to_vec();
    for (int k = 0; k < 6; ++k) {
      x = m.steps[k].A * x + m.steps[k].B * inputs[k].to_vec() + m.steps[k].g;
      CHECK((got[k + 1].to_vec() - x).cwiseAbs().maxCoeff() <= 1e-14);
    }
  }
}

TEST_CASE("propagate_stored: equality with current model, wrap of the window") {
  std::mt19937_64 rng(2);
  const AtvModel model = random_model(8, rng);
  const IterationRecord rec = record_with_models(0, 8, model, rng);
  const VehicleState x0{1.0, 0, 0, 0, 1.0, 0};
  std::vector<ControlInput> inputs;
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  for (int k = 0; k < 5; ++k) inputs.push_back({0.2 * u01(rng), 0.1 * u01(rng)});

  // Stored matrices identical to the current model from index 0.
  AtvModel head;
  head.steps.assign(model.steps.begin(), model.steps.begin() + 5);
  const auto current = propagate_current(head, x0, inputs);
  const auto stored = propagate_stored(rec, x0, inputs, 0);
  REQUIRE(current.size() == stored.size());
  for (std::size_t k = 0; k < current.size(); ++k)
    CHECK(current[k].to_vec() == stored[k].to_vec());

  // Window overruns the stored lap: indices wrap cyclically.
  const auto wrapped = propagate_stored(rec, x0, inputs, 6);
  Vec6 x = x0.to_vec();
  for (int k = 0; k < 5; ++k) {
    const AtvStep& s = rec.atv[(6 + k) % 8];
    x = s.apply(x, inputs[k].to_vec());
    CHECK((wrapped[k + 1].to_vec() - x).cwiseAbs().maxCoeff() <= 1e-15);
  }

  // Identity dynamics with zero input hold the state.
  IterationRecord still = rec;
  for (auto& s : still.atv) {
    s.A.setIdentity();
    s.B.setZero();
    s.g.setZero();
  }
  const std::vector<ControlInput> zeros(5, ControlInput{});
  for (const auto& xk : propagate_stored(still, x0, zeros, 3))
    CHECK(xk.to_vec() == x0.to_vec());
}

TEST_CASE("select_iterations: ranking, ties, gate and errors") {
  const int N = 4;
  std::vector<VehicleState> current(N + 1);
  for (int k = 0; k <= N; ++k) current[k] = {1.0 + 0.1 * k, 0, 0, 0, 0.5 * k, 0};

  auto shifted = [&](double offset) {
    std::vector<VehicleState> traj = current;
    for (auto& x : traj) x.e_y += offset;
    return traj;
  };

  std::map<int, std::vector<VehicleState>> stored;
  stored[3] = shifted(0.0);   // distance 0
  stored[1] = shifted(0.1);   // distance 0.5
  stored[7] = shifted(0.3);   // distance 1.5

  SimilarityReport rep = select_iterations(current, stored, 1, 0.5);
  CHECK(rep.selected == std::vector<int>{3});
  CHECK(rep.all[0].distance == doctest::Approx(0.0));
  CHECK(rep.gate_passed);

  rep = select_iterations(current, stored, 3, 10.0);
  CHECK(rep.selected == std::vector<int>{3, 1, 7});
  CHECK(rep.all[1].distance == doctest::Approx(0.5));
  CHECK(rep.all[2].distance == doctest::Approx(1.5));

  // Tie-break toward the smaller iteration id.
  std::map<int, std::vector<VehicleState>> tied;
  tied[5] = shifted(0.2);
  tied[2] = shifted(0.2);
  rep = select_iterations(current, tied, 1, 10.0);
  CHECK(rep.selected == std::vector<int>{2});

  CHECK_THROWS_AS(select_iterations(current, tied, 3, 1.0), InsufficientIterationsError);

  // Random trajectories match a brute-force L1 ranking.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::map<int, std::vector<VehicleState>> trajs;
    std::map<int, double> dist;
    for (int id = 0; id < 10; ++id) {
      std::vector<VehicleState> t(N + 1);
      double d = 0.0;
      for (int k = 0; k <= N; ++k) {
        Vec6 v = current[k].to_vec();
        for (int c = 0; c < 6; ++c) v[c] += 0.3 * u01(rng);
        t[k] = VehicleState::from_vec(v);
        d += (v - current[k].to_vec()).cwiseAbs().sum();
      }
      trajs[id] = t;
      dist[id] = d;
    }
    const SimilarityReport r = select_iterations(current, trajs, 3, 1.0);
    std::vector<std::pair<double, int>> ranked;
    for (const auto& [id, d] : dist) ranked.push_back({d, id});
    std::sort(ranked.begin(), ranked.end());
    for (int i = 0; i < 3; ++i) CHECK(r.selected[i] == ranked[i].second);
  }
}

TEST_CASE("similarity_gate: strict threshold semantics") {
  const std::vector<VehicleState> traj(3);
  std::map<int, std::vector<VehicleState>> stored;
  stored[0] = traj;
  stored[1] = traj;

  SimilarityReport rep;
  rep.all = {{0, 0.1}, {1, 0.2}};
  rep.selected = {0, 1};
  CHECK(similarity_gate(rep, 0.5));

  rep.all = {{0, 0.1}, {1, 0.6}};
  CHECK_FALSE(similarity_gate(rep, 0.5));

  rep.all = {{0, 0.5}, {1, 0.2}};
  CHECK_FALSE(similarity_gate(rep, 0.5));  // exactly delta fails (strict <)

  // Gate flag stored in the report always matches a recomputation.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<VehicleState> cur(4);
  for (auto& x : cur) x = {1.0 + u01(rng), 0, 0, 0, u01(rng), 0};
  for (int trial = 0; trial < 50; ++trial) {
    std::map<int, std::vector<VehicleState>> trajs;
    for (int id = 0; id < 4; ++id) {
      std::vector<VehicleState> t = cur;
      for (auto& x : t) x.e_y += 0.3 * u01(rng);
      trajs[id] = t;
    }
    const double delta = 1.5 * u01(rng);
    const SimilarityReport r = select_iterations(cur, trajs, 2, delta);
    CHECK(r.gate_passed == similarity_gate(r, delta));
  }
}

TEST_CASE("build_terminal_data: columns, costs, provenance") {
  std::mt19937_64 rng(5);
  DataSet ds(kTrackLen);
  const AtvModel model = random_model(4, rng);
  ds.insert_iteration(record_with_models(0, 30, model, rng));
  ds.insert_iteration(record_with_models(1, 25, model, rng));
  const StateMetric metric(Mat6::Identity(), kTrackLen);

  // Single iteration, M = 1, query equal to a stored state.
  const VehicleState probe = ds.iteration(0).states[7];
  const int one[] = {0};
  const TerminalData single = build_terminal_data(ds, probe, one, 1, metric);
  REQUIRE(single.columns() == 1);
  CHECK((single.D.col(0) - probe.to_vec()).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(single.J[0] == doctest::Approx(30 - 7));
  CHECK(single.provenance[0].iter_id == 0);
  CHECK(single.provenance[0].t == 7);

  // M * |L| = all states of the selected iterations.
  const int both[] = {0, 1};
  const TerminalData everything = build_terminal_data(ds, probe, std::span<const int>{one, 1},
                                                      31, metric);
  CHECK(everything.columns() == 31);

  // Random queries: columns and costs match the knn_states + T - t oracle.
  for (int trial = 0; trial < 30; ++trial) {
    std::uniform_real_distribution<double> u01(-1.0, 1.0);
    VehicleState x{1.0 + 0.2 * u01(rng), 0.05 * u01(rng), 0.05 * u01(rng), 0.02 * u01(rng),
                   10.0 * (1.0 + u01(rng) * 0.9), 0.05 * u01(rng)};
    const TerminalData term = build_terminal_data(ds, x, both, 5, metric);
    const NeighborIndex nn = ds.knn_states(x, 5, metric, both);
    REQUIRE(term.columns() == 10);
    for (int i = 0; i < 10; ++i) {
      CHECK(term.provenance[i].iter_id == nn[i].iter_id);
      CHECK(term.provenance[i].t == nn[i].t);
      const IterationRecord& rec = ds.iteration(nn[i].iter_id);
      CHECK(term.J[i] <= cost_to_go(rec, nn[i].t) + 1e-12);  // continuation only subtracts
    }
  }
}

TEST_CASE("build_terminal_data: finish-line continuation") {
  // One lap whose states run s = 0.1..20 in 0.1 steps; querying past the
  // line must unwrap early-lap states forward and continue the cost-to-go
  // negatively.
  DataSet ds(kTrackLen);
  IterationRecord rec;
  rec.iter_id = 0;
  rec.feasible = true;
  const int T = 199;
  rec.states.push_back({1.0, 0, 0, 0, 0.05, 0});
  for (int t = 0; t < T; ++t) {
    rec.inputs.push_back({0, 0});
    rec.states.push_back({1.0, 0, 0, 0, 0.05 + 0.1 * (t + 1), 0});
    rec.atv.push_back(AtvStep{});
  }
  ds.insert_iteration(rec);

  Mat6 w = Mat6::Zero();
  w(4, 4) = 1.0;  // select by s only
  const StateMetric metric(w, kTrackLen);
  const VehicleState query{1.0, 0, 0, 0, 20.6, 0};  // 0.6 m past the line
  const int ids[] = {0};
  const TerminalData term = build_terminal_data(ds, query, ids, 5, metric);

  for (int i = 0; i < term.columns(); ++i) {
    // Unwrapped s sits near the query, ahead of the nominal lap range.
    CHECK(std::abs(term.D(4, i) - query.s) < 1.0);
    const int t = term.provenance[i].t;
    const double s_raw = ds.iteration(0).states[t].s;
    const int m = static_cast<int>(std::llround((term.D(4, i) - s_raw) / kTrackLen));
    CHECK(term.J[i] == doctest::Approx(cost_to_go(ds.iteration(0), t) - m * T));
    if (m == 1) CHECK(term.J[i] <= 0);  // next-lap states credit the crossing
  }
}

TEST_CASE("safe-set membership: convex combinations stay inside the e_y box") {
  std::mt19937_64 rng(6);
  DataSet ds(kTrackLen);
  const AtvModel model = random_model(4, rng);
  ds.insert_iteration(record_with_models(0, 40, model, rng));
  ds.insert_iteration(record_with_models(1, 40, model, rng));
  const StateMetric metric(Mat6::Identity(), kTrackLen);
  const int both[] = {0, 1};

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    VehicleState x{1.0, 0, 0, 0, 20.0 * u01(rng), 0.05};
    const TerminalData term = build_terminal_data(ds, x, both, 6, metric);
    Eigen::VectorXd lambda(term.columns());
    for (int i = 0; i < lambda.size(); ++i) lambda[i] = u01(rng);
    lambda /= lambda.sum();
    const Vec6 mix = term.D * lambda;
    const double max_ey = term.D.row(5).cwiseAbs().maxCoeff();
    CHECK(std::abs(mix[5]) <= max_ey + 1e-12);
  }
}

TEST_CASE("selection monotonicity: adding a strictly farther iteration keeps L") {
  const int N = 3;
  std::vector<VehicleState> current(N + 1);
  for (int k = 0; k <= N; ++k) current[k] = {1.0, 0, 0, 0, 0.1 * k, 0};

  std::map<int, std::vector<VehicleState>> stored;
  for (int id = 0; id < 3; ++id) {
    std::vector<VehicleState> t = current;
    for (auto& x : t) x.e_y += 0.05 * (id + 1);
    stored[id] = t;
  }
  const SimilarityReport before = select_iterations(current, stored, 2, 10.0);

  std::vector<VehicleState> far = current;
  for (auto& x : far) x.e_y += 5.0;
  stored[99] = far;
  const SimilarityReport after = select_iterations(current, stored, 2, 10.0);
  CHECK(before.selected == after.selected);
}

TEST_CASE("safety controller: equilibrium, braking, centerline convergence") {
  const Track track = oracles::make_track();
  const VehicleParams params;
  const InputBounds bounds;
  const QpSettings qp;

  // On the centerline at the reference speed: nearly no action.
  const VehicleState settled{1.0, 0, 0, 0, 1.0, 0};
  const ControlInput u0 = safety_controller(settled, track, params, bounds, 0.4, 1.0, qp);
  CHECK(std::abs(u0.a) < 0.05);
  CHECK(std::abs(u0.delta) < 0.01);

  // Too fast: decelerate.
  const VehicleState fast{2.0, 0, 0, 0, 1.0, 0};
  CHECK(safety_controller(fast, track, params, bounds, 0.4, 1.0, qp).a < 0.0);

  // Offset left of the centerline: steer back and converge within 5 s.
  const FrictionMap map({}, 0.9, track.total_length());
  VehicleState x{1.0, 0, 0, 0, 0.5, 0.2};
  const ControlInput first = safety_controller(x, track, params, bounds, 0.4, 1.0, qp);
  CHECK(first.delta < 0.0);  // positive delta grows e_y, so correction is negative
  bool converged = false;
  for (int t = 0; t < 50; ++t) {
    const ControlInput u = safety_controller(x, track, params, bounds, 0.4, 1.0, qp);
    x = step_true(x, u, params, track, map);
    if (std::abs(x.e_y) < 0.05) {
      converged = true;
      break;
    }
  }
  CHECK(converged);
}
