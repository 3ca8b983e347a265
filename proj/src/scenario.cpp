#include "mmlmpc/scenario.hpp"

#include <fstream>

#include <json.hpp>

namespace mmlmpc {

using nlohmann::json;

FrictionMap Scenario::map_for_iteration(int k) const {
  if (friction_schedule.empty()) throw ConfigError("scenario has no friction schedule");
  const FrictionMapSpec* spec = nullptr;
  for (const auto& [idx, m] : friction_schedule)
    if (idx <= k) spec = &m;
  if (!spec) throw ConfigError("no friction map scheduled for iteration " + std::to_string(k));
  return spec->build(track.total_length());
}

void Scenario::validate() const {
  params.validate();
  if (bootstrap.laps_per_mode < 1) throw ConfigError("bootstrap needs at least 1 lap per mode");
  if (bootstrap.modes.empty()) throw ConfigError("bootstrap needs at least one mode");
  for (std::size_t i = 1; i < friction_schedule.size(); ++i)
    if (friction_schedule[i].first <= friction_schedule[i - 1].first)
      throw ConfigError("friction_schedule must be sorted by iteration index");
  if (max_iterations < 1) throw ConfigError("max_iterations must be positive");
  if (convergence_epsilon <= 0) throw ConfigError("convergence_epsilon must be positive");
  // Exercise every scheduled map against the track geometry.
  for (const auto& [idx, m] : friction_schedule) (void)m.build(track.total_length());
  for (const auto& m : bootstrap.modes) (void)m.build(track.total_length());
}

namespace {

FrictionMapSpec map_spec_from_json(const json& j) {
  FrictionMapSpec spec;
  spec.default_mu = j.at("default_mu").get<double>();
  if (j.contains("regions"))
    for (const auto& r : j.at("regions"))
      spec.regions.push_back(
          {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()});
  return spec;
}

json map_spec_to_json(const FrictionMapSpec& spec) {
  json j;
  j["default_mu"] = spec.default_mu;
  j["regions"] = json::array();
  for (const auto& r : spec.regions) j["regions"].push_back(json::array({r.s_start, r.s_end, r.mu}));
  return j;
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("scenario parse error: " + std::string(e.what()));
  }

  try {
    Scenario scn;
    maybe(j, "name", scn.name);
    maybe(j, "seed", scn.seed);
    maybe(j, "max_iterations", scn.max_iterations);
    maybe(j, "convergence_epsilon", scn.convergence_epsilon);
    maybe(j, "max_steps_per_lap", scn.max_steps_per_lap);
    maybe(j, "dump_horizon", scn.dump_horizon);

    const json& jt = j.at("track");
    std::vector<TrackSegment> segs;
    for (const auto& s : jt.at("segments"))
      segs.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
    scn.track = Track(segs, jt.at("half_width").get<double>());

    if (j.contains("vehicle")) {
      const json& jv = j.at("vehicle");
      maybe(jv, "mass", scn.params.mass);
      maybe(jv, "Iz", scn.params.Iz);
      maybe(jv, "lf", scn.params.lf);
      maybe(jv, "lr", scn.params.lr);
      maybe(jv, "tire_B", scn.params.tire_B);
      maybe(jv, "tire_C", scn.params.tire_C);
      maybe(jv, "tire_D", scn.params.tire_D);
      maybe(jv, "dt", scn.params.dt);
      maybe(jv, "vx_floor", scn.params.vx_floor);
    }

    if (j.contains("start_state")) {
      const json& js = j.at("start_state");
      maybe(js, "vx", scn.start_state.vx);
      maybe(js, "vy", scn.start_state.vy);
      maybe(js, "wz", scn.start_state.wz);
      maybe(js, "e_psi", scn.start_state.e_psi);
      maybe(js, "s", scn.start_state.s);
      maybe(js, "e_y", scn.start_state.e_y);
    }

    for (const auto& entry : j.at("friction_schedule"))
      scn.friction_schedule.emplace_back(entry.at("iteration").get<int>(),
                                         map_spec_from_json(entry.at("map")));

    const json& jb = j.at("bootstrap");
    maybe(jb, "laps_per_mode", scn.bootstrap.laps_per_mode);
    maybe(jb, "v_ref", scn.bootstrap.v_ref);
    maybe(jb, "k_v", scn.bootstrap.k_v);
    maybe(jb, "k_ey", scn.bootstrap.k_ey);
    maybe(jb, "k_epsi", scn.bootstrap.k_epsi);
    maybe(jb, "dither_a", scn.bootstrap.dither_a);
    maybe(jb, "dither_delta", scn.bootstrap.dither_delta);
    maybe(jb, "v_ref_jitter", scn.bootstrap.v_ref_jitter);
    for (const auto& m : jb.at("modes")) scn.bootstrap.modes.push_back(map_spec_from_json(m));

    ControllerConfig& cc = scn.controller;
    cc.state_bounds.ey_limit = scn.track.half_width();
    if (j.contains("controller")) {
      const json& jc = j.at("controller");
      maybe(jc, "N", cc.N);
      maybe(jc, "M", cc.M);
      maybe(jc, "N_SS", cc.N_SS);
      maybe(jc, "P", cc.fit.P);
      maybe(jc, "eta", cc.fit.eta);
      maybe(jc, "eta_scale", cc.fit.eta_scale);
      maybe(jc, "ridge", cc.fit.ridge);
      maybe(jc, "delta_gate", cc.delta_gate);
      maybe(jc, "safety_v_ref", cc.safety_v_ref);
      if (jc.contains("q_weights")) {
        const auto w = jc.at("q_weights").get<std::vector<double>>();
        if (w.size() != kTupleDim) throw ConfigError("q_weights must have 11 entries");
        cc.q_weight = Mat11::Zero();
        for (int i = 0; i < kTupleDim; ++i) cc.q_weight(i, i) = w[i];
      }
      if (jc.contains("d_weights")) {
        const auto w = jc.at("d_weights").get<std::vector<double>>();
        if (w.size() != kStateDim) throw ConfigError("d_weights must have 6 entries");
        cc.d_weight = Mat6::Zero();
        for (int i = 0; i < kStateDim; ++i) cc.d_weight(i, i) = w[i];
      }
      if (jc.contains("input_reg")) {
        const auto r = jc.at("input_reg").get<std::vector<double>>();
        if (r.size() != 2) throw ConfigError("input_reg must have 2 entries");
        cc.cost.input_reg = (Mat2() << r[0], 0.0, 0.0, r[1]).finished();
      }
      if (jc.contains("rate_reg")) {
        const auto r = jc.at("rate_reg").get<std::vector<double>>();
        if (r.size() != 2) throw ConfigError("rate_reg must have 2 entries");
        cc.cost.rate_reg = (Mat2() << r[0], 0.0, 0.0, r[1]).finished();
      }
      maybe(jc, "slack_weight", cc.cost.slack_weight);
      maybe(jc, "time_weight", cc.cost.time_weight);
      if (jc.contains("bounds")) {
        const json& jbo = jc.at("bounds");
        maybe(jbo, "a_min", cc.input_bounds.a_min);
        maybe(jbo, "a_max", cc.input_bounds.a_max);
        maybe(jbo, "delta_min", cc.input_bounds.delta_min);
        maybe(jbo, "delta_max", cc.input_bounds.delta_max);
        maybe(jbo, "vx_min", cc.state_bounds.vx_min);
        maybe(jbo, "vx_max", cc.state_bounds.vx_max);
        maybe(jbo, "ey_limit", cc.state_bounds.ey_limit);
      }
      if (jc.contains("qp")) {
        const json& jq = jc.at("qp");
        maybe(jq, "tol_abs", cc.qp.tol_abs);
        maybe(jq, "tol_rel", cc.qp.tol_rel);
        maybe(jq, "max_iter", cc.qp.max_iter);
        maybe(jq, "rho", cc.qp.rho);
      }
    }

    scn.validate();
    return scn;
  } catch (const json::exception& e) {
    throw ConfigError("scenario field error: " + std::string(e.what()));
  }
}

void write_scenario_snapshot(const std::filesystem::path& run_dir, const Scenario& scn) {
  json j;
  j["name"] = scn.name;
  j["seed"] = scn.seed;
  j["half_width"] = scn.track.half_width();
  j["segments"] = json::array();
  for (const auto& s : scn.track.segments())
    j["segments"].push_back(json::array({s.length, s.curvature}));
  j["friction_schedule"] = json::array();
  for (const auto& [idx, m] : scn.friction_schedule) {
    json e;
    e["iteration"] = idx;
    e["map"] = map_spec_to_json(m);
    j["friction_schedule"].push_back(e);
  }
  j["dt"] = scn.params.dt;
  j["lf"] = scn.params.lf;
  j["lr"] = scn.params.lr;
  j["vx_floor"] = scn.params.vx_floor;
  std::ofstream out(run_dir / "scenario_snapshot.json");
  if (!out) throw MissingDataError("cannot write scenario snapshot");
  out << j.dump(2);
}

}  // namespace mmlmpc
