#include "mmlmpc/track.hpp"

#include <cmath>
#include <numbers>

namespace mmlmpc {

Track::Track(std::vector<TrackSegment> segments, double half_width)
    : segments_(std::move(segments)), half_width_(half_width) {
  if (segments_.empty()) throw ConfigError("track needs at least one segment");
  if (half_width_ <= 0.0) throw ConfigError("track half_width must be positive");

  total_length_ = 0.0;
  double winding = 0.0;
  cum_length_.reserve(segments_.size());
  for (const auto& seg : segments_) {
    if (seg.length <= 0.0) throw ConfigError("track segment length must be positive");
    total_length_ += seg.length;
    winding += seg.curvature * seg.length;
    cum_length_.push_back(total_length_);
  }

  const double turns = winding / (2.0 * std::numbers::pi);
  if (std::abs(turns - std::round(turns)) > 1e-9)
    throw ConfigError("track does not close: curvature integral is not a multiple of 2*pi");

  // Precompute inertial poses at segment starts for centerline reconstruction.
  Pose p{0.0, 0.0, 0.0};
  seg_start_.reserve(segments_.size());
  for (const auto& seg : segments_) {
    seg_start_.push_back(p);
    if (std::abs(seg.curvature) < 1e-12) {
      p.x += seg.length * std::cos(p.heading);
      p.y += seg.length * std::sin(p.heading);
    } else {
      const double r = 1.0 / seg.curvature;
      const double dh = seg.curvature * seg.length;
      p.x += r * (std::sin(p.heading + dh) - std::sin(p.heading));
      p.y += r * (std::cos(p.heading) - std::cos(p.heading + dh));
      p.heading += dh;
    }
  }
}

double Track::wrap(double s) const {
  double w = std::fmod(s, total_length_);
  if (w < 0.0) w += total_length_;
  return w;
}

double Track::wrapped_diff(double s1, double s2) const {
  double d = std::fmod(s1 - s2, total_length_);
  if (d < -0.5 * total_length_) d += total_length_;
  if (d >= 0.5 * total_length_) d -= total_length_;
  return d;
}

double Track::curvature_at(double s) const {
  const double w = wrap(s);
  for (std::size_t i = 0; i < segments_.size(); ++i)
    if (w < cum_length_[i]) return segments_[i].curvature;
  return segments_.back().curvature;
}

Track::Pose Track::centerline_pose(double s) const {
  const double w = wrap(s);
  std::size_t i = 0;
  double seg_begin = 0.0;
  while (i + 1 < segments_.size() && w >= cum_length_[i]) {
    seg_begin = cum_length_[i];
    ++i;
  }
  const TrackSegment& seg = segments_[i];
  const Pose& p0 = seg_start_[i];
  const double ds = w - seg_begin;
  Pose p = p0;
  if (std::abs(seg.curvature) < 1e-12) {
    p.x += ds * std::cos(p0.heading);
    p.y += ds * std::sin(p0.heading);
  } else {
    const double r = 1.0 / seg.curvature;
    const double dh = seg.curvature * ds;
    p.x += r * (std::sin(p0.heading + dh) - std::sin(p0.heading));
    p.y += r * (std::cos(p0.heading) - std::cos(p0.heading + dh));
    p.heading += dh;
  }
  return p;
}

FrictionMap::FrictionMap(std::vector<FrictionRegion> regions, double default_mu,
                         double total_length)
    : regions_(std::move(regions)), default_mu_(default_mu), total_length_(total_length) {
  if (default_mu_ <= 0.0) throw ConfigError("default_mu must be positive");
  if (total_length_ <= 0.0) throw ConfigError("friction map needs a positive track length");
  for (const auto& r : regions_) {
    if (r.mu <= 0.0) throw ConfigError("friction region mu must be positive");
    if (r.s_end <= r.s_start) throw ConfigError("friction region must have s_end > s_start");
    if (r.s_start < 0.0 || r.s_end > total_length_)
      throw ConfigError("friction region outside [0, total_length)");
  }
  for (std::size_t i = 0; i < regions_.size(); ++i)
    for (std::size_t j = i + 1; j < regions_.size(); ++j)
      if (regions_[i].s_start < regions_[j].s_end && regions_[j].s_start < regions_[i].s_end)
        throw ConfigError("friction regions overlap");
}

double FrictionMap::friction_at(double s) const {
  double w = std::fmod(s, total_length_);
  if (w < 0.0) w += total_length_;
  for (const auto& r : regions_)
    if (w >= r.s_start && w < r.s_end) return r.mu;
  return default_mu_;
}

}  // namespace mmlmpc
