#include "mmlmpc/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <queue>

#include <json.hpp>

namespace mmlmpc {

void IterationRecord::validate() const {
  if (states.size() != inputs.size() + 1 || states.size() != atv.size() + 1)
    throw LengthMismatchError("iteration record lengths inconsistent: |states| = " +
                              std::to_string(states.size()) + ", |inputs| = " +
                              std::to_string(inputs.size()) + ", |atv| = " +
                              std::to_string(atv.size()));
  if (inputs.empty()) throw LengthMismatchError("iteration record is empty");
}

TupleMetric::TupleMetric(const Mat11& weight, double track_length)
    : weight_(weight), track_length_(track_length) {
  diagonal_ = weight_.isDiagonal(0.0);
}

double TupleMetric::dist_sq(const Vec11& a, const Vec11& b) const {
  Vec11 d = a - b;
  double ds = std::fmod(d[4], track_length_);
  if (ds < -0.5 * track_length_) ds += track_length_;
  if (ds >= 0.5 * track_length_) ds -= track_length_;
  d[4] = ds;
  if (diagonal_) return d.cwiseProduct(weight_.diagonal()).dot(d);
  return d.dot(weight_ * d);
}

StateMetric::StateMetric(const Mat6& weight, double track_length)
    : weight_(weight), track_length_(track_length) {}

double StateMetric::dist_sq(const VehicleState& a, const VehicleState& b) const {
  Vec6 d = a.to_vec() - b.to_vec();
  double ds = std::fmod(d[4], track_length_);
  if (ds < -0.5 * track_length_) ds += track_length_;
  if (ds >= 0.5 * track_length_) ds -= track_length_;
  d[4] = ds;
  return d.dot(weight_ * d);
}

DataSet::DataSet(double track_length, double bucket_width)
    : track_length_(track_length), bucket_width_(bucket_width) {
  if (track_length_ <= 0.0) throw ConfigError("DataSet needs a positive track length");
  if (bucket_width_ <= 0.0) throw ConfigError("bucket width must be positive");
  n_buckets_ = std::max(1, static_cast<int>(std::round(track_length_ / bucket_width_)));
  bucket_width_ = track_length_ / n_buckets_;  // even division keeps the ring bound exact
  buckets_.resize(n_buckets_);
}

void DataSet::insert_iteration(IterationRecord rec) {
  rec.validate();
  if (!rec.feasible) return;  // successful-iteration filter
  if (has_iteration(rec.iter_id))
    throw ConfigError("duplicate iteration id " + std::to_string(rec.iter_id));

  const int idx = static_cast<int>(iterations_.size());
  for (int t = 0; t < rec.duration(); ++t) {
    const int flat = static_cast<int>(flat_.size());
    flat_.push_back({idx, t});
    double w = std::fmod(rec.states[t].s, track_length_);
    if (w < 0.0) w += track_length_;
    int b = static_cast<int>(w / bucket_width_);
    if (b >= n_buckets_) b = n_buckets_ - 1;
    buckets_[b].push_back(flat);
  }
  iterations_.push_back(std::move(rec));
}

const IterationRecord& DataSet::iteration(int iter_id) const {
  for (const auto& it : iterations_)
    if (it.iter_id == iter_id) return it;
  throw IndexError("unknown iteration id " + std::to_string(iter_id));
}

bool DataSet::has_iteration(int iter_id) const {
  for (const auto& it : iterations_)
    if (it.iter_id == iter_id) return true;
  return false;
}

namespace {

struct HeapEntry {
  double dist_sq;
  int iter_id;
  int t;
  bool operator<(const HeapEntry& o) const {
    if (dist_sq != o.dist_sq) return dist_sq < o.dist_sq;
    if (iter_id != o.iter_id) return iter_id < o.iter_id;
    return t < o.t;
  }
};

NeighborIndex heap_to_sorted(std::vector<HeapEntry> entries) {
  std::sort(entries.begin(), entries.end());
  NeighborIndex out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back({e.iter_id, e.t, e.dist_sq});
  return out;
}

}  // namespace

NeighborIndex DataSet::knn_tuples(const DynTuple& query, int P, const TupleMetric& metric) const {
  if (P <= 0) throw InsufficientDataError("P must be positive");
  if (static_cast<int>(flat_.size()) < P)
    throw InsufficientDataError("knn_tuples: " + std::to_string(flat_.size()) +
                                " tuples stored, " + std::to_string(P) + " requested");
  const Vec11 q = query.coords();
  if (metric.diagonal() && metric.s_weight() > 0.0) return knn_bucketed(q, P, metric);
  return knn_linear(q, P, metric);
}

NeighborIndex DataSet::knn_linear(const Vec11& q, int P, const TupleMetric& metric) const {
  std::priority_queue<HeapEntry> heap;  // max-heap keeps the P smallest
  for (const auto& ref : flat_) {
    const IterationRecord& rec = iterations_[ref.iter_idx];
    const double d = metric.dist_sq(q, rec.tuple_at(ref.t).coords());
    HeapEntry e{d, rec.iter_id, ref.t};
    if (static_cast<int>(heap.size()) < P) {
      heap.push(e);
    } else if (e < heap.top()) {
      heap.pop();
      heap.push(e);
    }
  }
  std::vector<HeapEntry> entries;
  entries.reserve(heap.size());
  while (!heap.empty()) {
    entries.push_back(heap.top());
    heap.pop();
  }
  return heap_to_sorted(std::move(entries));
}

// Ring expansion over s-buckets. Valid only for diagonal weights with a
// strictly positive s weight: a tuple r rings away satisfies
// dist_sq >= s_weight * ((r-1) * bucket_width)^2.
NeighborIndex DataSet::knn_bucketed(const Vec11& q, int P, const TupleMetric& metric) const {
  double sq = std::fmod(q[4], track_length_);
  if (sq < 0.0) sq += track_length_;
  int b0 = static_cast<int>(sq / bucket_width_);
  if (b0 >= n_buckets_) b0 = n_buckets_ - 1;

  std::priority_queue<HeapEntry> heap;
  auto scan_bucket = [&](int b) {
    for (int flat : buckets_[b]) {
      const FlatRef& ref = flat_[flat];
      const IterationRecord& rec = iterations_[ref.iter_idx];
      const double d = metric.dist_sq(q, rec.tuple_at(ref.t).coords());
      HeapEntry e{d, rec.iter_id, ref.t};
      if (static_cast<int>(heap.size()) < P) {
        heap.push(e);
      } else if (e < heap.top()) {
        heap.pop();
        heap.push(e);
      }
    }
  };

  scan_bucket(b0);
  const int max_ring = n_buckets_ / 2 + 1;
  for (int r = 1; n_buckets_ > 1 && r <= max_ring; ++r) {
    if (static_cast<int>(heap.size()) == P) {
      const double lb = (r - 1) * bucket_width_;
      if (metric.s_weight() * lb * lb > heap.top().dist_sq) break;
    }
    const int lo = ((b0 - r) % n_buckets_ + n_buckets_) % n_buckets_;
    const int hi = (b0 + r) % n_buckets_;
    if (lo == hi) {
      scan_bucket(lo);
      break;  // rings met on the far side of the loop
    }
    scan_bucket(lo);
    scan_bucket(hi);
    if (hi == lo - 1 || (lo == 0 && hi == n_buckets_ - 1)) break;  // all buckets visited
  }

  std::vector<HeapEntry> entries;
  entries.reserve(heap.size());
  while (!heap.empty()) {
    entries.push_back(heap.top());
    heap.pop();
  }
  return heap_to_sorted(std::move(entries));
}

NeighborIndex DataSet::knn_states(const VehicleState& x, int M, const StateMetric& metric,
                                  std::span<const int> iters) const {
  if (M <= 0) throw InsufficientDataError("M must be positive");
  NeighborIndex out;
  for (int id : iters) {
    const IterationRecord& rec = iteration(id);
    const int n_states = static_cast<int>(rec.states.size());
    if (n_states < M)
      throw InsufficientDataError("knn_states: iteration " + std::to_string(id) + " has " +
                                  std::to_string(n_states) + " states, " + std::to_string(M) +
                                  " requested");
    std::vector<HeapEntry> entries;
    entries.reserve(n_states);
    for (int t = 0; t < n_states; ++t)
      entries.push_back({metric.dist_sq(x, rec.states[t]), id, t});
    std::sort(entries.begin(), entries.end());
    for (int i = 0; i < M; ++i) out.push_back({entries[i].iter_id, entries[i].t, entries[i].dist_sq});
  }
  return out;
}

int nearest_time_index(const IterationRecord& rec, const VehicleState& x, double track_length) {
  if (rec.states.empty()) throw IndexError("nearest_time_index on empty record");
  const Vec6 xv = x.to_vec();
  int best_t = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < rec.states.size(); ++t) {
    Vec6 d = rec.states[t].to_vec() - xv;
    double ds = std::fmod(d[4], track_length);
    if (ds < -0.5 * track_length) ds += track_length;
    if (ds >= 0.5 * track_length) ds -= track_length;
    d[4] = ds;
    const double l1 = d.cwiseAbs().sum();
    if (l1 < best) {  // strict: ties keep the smaller t
      best = l1;
      best_t = static_cast<int>(t);
    }
  }
  return best_t;
}

int cost_to_go(const IterationRecord& rec, int t) {
  if (t < 0 || t > rec.duration())
    throw IndexError("cost_to_go: time index " + std::to_string(t) + " outside [0, " +
                     std::to_string(rec.duration()) + "]");
  return rec.duration() - t;
}

// --- persistence ---

namespace {

using nlohmann::json;

json state_to_json(const VehicleState& x) {
  return json::array({x.vx, x.vy, x.wz, x.e_psi, x.s, x.e_y});
}

VehicleState state_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
          j.at(3).get<double>(), j.at(4).get<double>(), j.at(5).get<double>()};
}

template <typename Mat>
json mat_row_major(const Mat& m) {
  json out = json::array();
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

template <typename Mat>
void mat_from_row_major(const json& j, Mat& m) {
  int k = 0;
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) m(r, c) = j.at(k++).get<double>();
}

}  // namespace

std::filesystem::path write_iteration_file(const std::filesystem::path& dir,
                                           const IterationRecord& rec,
                                           const FrictionMap& friction_snapshot) {
  rec.validate();
  json j;
  j["iter_id"] = rec.iter_id;
  j["duration"] = rec.duration();
  j["feasible"] = rec.feasible;
  j["states"] = json::array();
  for (const auto& x : rec.states) j["states"].push_back(state_to_json(x));
  j["inputs"] = json::array();
  for (const auto& u : rec.inputs) j["inputs"].push_back(json::array({u.a, u.delta}));
  json atv;
  atv["A"] = json::array();
  atv["B"] = json::array();
  atv["g"] = json::array();
  for (const auto& m : rec.atv) {
    atv["A"].push_back(mat_row_major(m.A));
    atv["B"].push_back(mat_row_major(m.B));
    atv["g"].push_back(mat_row_major(m.g));
  }
  j["atv"] = std::move(atv);
  json fm;
  fm["default_mu"] = friction_snapshot.default_mu();
  fm["regions"] = json::array();
  for (const auto& r : friction_snapshot.regions())
    fm["regions"].push_back(json::array({r.s_start, r.s_end, r.mu}));
  j["friction_map"] = std::move(fm);

  const auto path = dir / ("iter_" + std::to_string(rec.iter_id) + ".json");
  std::ofstream out(path);
  if (!out) throw MissingDataError("cannot open " + path.string() + " for writing");
  out << j.dump();
  return path;
}

IterationFile read_iteration_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingDataError("cannot open " + path.string());
  json j = json::parse(in);

  IterationFile out;
  IterationRecord& rec = out.record;
  rec.iter_id = j.at("iter_id").get<int>();
  rec.feasible = j.at("feasible").get<bool>();
  for (const auto& s : j.at("states")) rec.states.push_back(state_from_json(s));
  for (const auto& u : j.at("inputs"))
    rec.inputs.push_back({u.at(0).get<double>(), u.at(1).get<double>()});
  const json& atv = j.at("atv");
  const std::size_t n = atv.at("A").size();
  for (std::size_t k = 0; k < n; ++k) {
    AtvStep step;
    mat_from_row_major(atv.at("A").at(k), step.A);
    mat_from_row_major(atv.at("B").at(k), step.B);
    mat_from_row_major(atv.at("g").at(k), step.g);
    rec.atv.push_back(step);
  }
  rec.validate();
  out.friction_default_mu = j.at("friction_map").at("default_mu").get<double>();
  for (const auto& r : j.at("friction_map").at("regions"))
    out.friction_regions.push_back(
        {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()});
  return out;
}

}  // namespace mmlmpc
