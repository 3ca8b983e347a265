#pragma once

#include <vector>

#include "mmlmpc/errors.hpp"

namespace mmlmpc {

/// One piecewise-constant-curvature section of the centerline.
struct TrackSegment {
  double length = 0.0;     // [m]
  double curvature = 0.0;  // [1/m], positive = left turn
};

/// Closed parametric track: ordered curvature segments plus a half-width.
/// Arc length s is the only coordinate; all lookups wrap modulo the total
/// length. Construction rejects non-closing segment lists (the integral of
/// curvature over one lap must be a multiple of 2*pi).
class Track {
 public:
  Track(std::vector<TrackSegment> segments, double half_width);

  double total_length() const { return total_length_; }
  double half_width() const { return half_width_; }
  const std::vector<TrackSegment>& segments() const { return segments_; }

  /// Wraps an arc length into [0, total_length).
  double wrap(double s) const;

  /// Signed difference s1 - s2 wrapped into [-L/2, L/2).
  double wrapped_diff(double s1, double s2) const;

  /// Curvature of the segment containing s (piecewise constant, wrapped).
  double curvature_at(double s) const;

  /// Centerline pose in the inertial plane, for plotting and geometry checks.
  struct Pose {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;
  };
  Pose centerline_pose(double s) const;

 private:
  std::vector<TrackSegment> segments_;
  std::vector<double> cum_length_;  // cumulative end arc length per segment
  std::vector<Pose> seg_start_;     // pose at the start of each segment
  double half_width_;
  double total_length_;
};

struct FrictionRegion {
  double s_start = 0.0;
  double s_end = 0.0;
  double mu = 0.0;
};

/// Arc-length-indexed friction coefficient map. Regions are half-open
/// [s_start, s_end) intervals; anything uncovered gets default_mu.
class FrictionMap {
 public:
  FrictionMap() = default;
  FrictionMap(std::vector<FrictionRegion> regions, double default_mu, double total_length);

  /// Friction at arc length s (wrapped). Total function.
  double friction_at(double s) const;

  double default_mu() const { return default_mu_; }
  const std::vector<FrictionRegion>& regions() const { return regions_; }

 private:
  std::vector<FrictionRegion> regions_;
  double default_mu_ = 1.0;
  double total_length_ = 1.0;
};

}  // namespace mmlmpc
