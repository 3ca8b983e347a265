#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mmlmpc/errors.hpp"
#include "mmlmpc/track.hpp"
#include "mmlmpc/types.hpp"

namespace mmlmpc {

/// One-step dynamics tuple (x, u, x+). For stored tuples x_next is the
/// recorded successor; for queries it may be a predicted next state.
struct DynTuple {
  VehicleState x;
  ControlInput u;
  VehicleState x_next;

  /// Metric coordinates: [vx, vy, wz, e_psi, s, e_y, a, delta, vx+, vy+, wz+].
  Vec11 coords() const {
    Vec11 c;
    c << x.vx, x.vy, x.wz, x.e_psi, x.s, x.e_y, u.a, u.delta, x_next.vx, x_next.vy, x_next.wz;
    return c;
  }
};

/// One completed lap: trajectory, inputs, per-step affine models, duration.
struct IterationRecord {
  int iter_id = 0;
  std::vector<VehicleState> states;  // length T+1
  std::vector<ControlInput> inputs;  // length T
  std::vector<AtvStep> atv;          // length T
  bool feasible = false;

  int duration() const { return static_cast<int>(inputs.size()); }
  void validate() const;

  DynTuple tuple_at(int t) const { return {states[t], inputs[t], states[t + 1]}; }
};

struct Neighbor {
  int iter_id = 0;
  int t = 0;
  double dist_sq = 0.0;
};
using NeighborIndex = std::vector<Neighbor>;

/// Weighted squared distance over tuple coordinates; the s coordinate is
/// compared modulo the track length.
class TupleMetric {
 public:
  TupleMetric(const Mat11& weight, double track_length);

  double dist_sq(const DynTuple& a, const DynTuple& b) const {
    return dist_sq(a.coords(), b.coords());
  }
  double dist_sq(const Vec11& a, const Vec11& b) const;

  const Mat11& weight() const { return weight_; }
  bool diagonal() const { return diagonal_; }
  double s_weight() const { return weight_(4, 4); }
  double track_length() const { return track_length_; }

 private:
  Mat11 weight_;
  double track_length_;
  bool diagonal_;
};

/// Weighted squared distance over states, s compared modulo track length.
class StateMetric {
 public:
  StateMetric(const Mat6& weight, double track_length);
  double dist_sq(const VehicleState& a, const VehicleState& b) const;
  const Mat6& weight() const { return weight_; }

 private:
  Mat6 weight_;
  double track_length_;
};

/// Store of completed feasible iterations with nearest-neighbor queries over
/// states and one-step dynamics tuples. The query surface exposes no
/// friction information. Reads are concurrency-safe; insertion needs
/// exclusive access.
class DataSet {
 public:
  explicit DataSet(double track_length, double bucket_width = 1.0);

  /// Appends rec iff rec.feasible; infeasible records are dropped.
  /// Throws LengthMismatchError on inconsistent records.
  void insert_iteration(IterationRecord rec);

  const std::vector<IterationRecord>& iterations() const { return iterations_; }
  const IterationRecord& iteration(int iter_id) const;
  bool has_iteration(int iter_id) const;
  std::size_t tuple_count() const { return flat_.size(); }
  double track_length() const { return track_length_; }

  /// P nearest stored tuples to the query under the metric. Distances are
  /// squared, sorted non-decreasing; spans all iterations. Exact: uses an
  /// s-bucketed scan when the metric permits pruning, a full scan otherwise.
  NeighborIndex knn_tuples(const DynTuple& query, int P, const TupleMetric& metric) const;

  /// For each iteration id in iters (in the given order), the M nearest
  /// stored states to x. Throws InsufficientDataError when an iteration has
  /// fewer than M states.
  NeighborIndex knn_states(const VehicleState& x, int M, const StateMetric& metric,
                           std::span<const int> iters) const;

  DynTuple tuple_at(int iter_id, int t) const { return iteration(iter_id).tuple_at(t); }

 private:
  struct FlatRef {
    int iter_idx;
    int t;
  };
  NeighborIndex knn_linear(const Vec11& q, int P, const TupleMetric& metric) const;
  NeighborIndex knn_bucketed(const Vec11& q, int P, const TupleMetric& metric) const;

  std::vector<IterationRecord> iterations_;
  std::vector<FlatRef> flat_;
  std::vector<std::vector<int>> buckets_;  // flat indices grouped by floor(s / bucket_width)
  double track_length_;
  double bucket_width_;
  int n_buckets_;
};

/// Time index of the stored state closest to x in (s-wrapped) L1 distance;
/// ties break toward the smaller index.
int nearest_time_index(const IterationRecord& rec, const VehicleState& x, double track_length);

/// Steps remaining to finish the iteration from time t: T - t.
int cost_to_go(const IterationRecord& rec, int t);

/// Writes iter_<k>.json into dir. The friction snapshot is stored for
/// post-hoc analysis only; the DataSet query surface never sees it.
std::filesystem::path write_iteration_file(const std::filesystem::path& dir,
                                           const IterationRecord& rec,
                                           const FrictionMap& friction_snapshot);

struct IterationFile {
  IterationRecord record;
  std::vector<FrictionRegion> friction_regions;
  double friction_default_mu = 0.0;
};
IterationFile read_iteration_file(const std::filesystem::path& path);

}  // namespace mmlmpc
