#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "mmlmpc/harness.hpp"

namespace mmlmpc {

namespace {

using nlohmann::json;

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x, y;
  bool dashed = false;
};

class SvgCanvas {
 public:
  SvgCanvas(double width, double height) : w_(width), h_(height) {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_
          << "\" viewBox=\"0 0 " << w_ << ' ' << h_ << "\">\n"
          << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }

  void polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                const std::string& color, double stroke, bool dashed = false) {
    if (xs.size() < 2) return;
    body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << stroke
          << '"';
    if (dashed) body_ << " stroke-dasharray=\"6,4\"";
    body_ << " points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) body_ << xs[i] << ',' << ys[i] << ' ';
    body_ << "\"/>\n";
  }

  void circle(double x, double y, double r, const std::string& color) {
    body_ << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << r << "\" fill=\"" << color
          << "\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& color,
            double stroke) {
    body_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
          << "\" stroke=\"" << color << "\" stroke-width=\"" << stroke << "\"/>\n";
  }

  void text(double x, double y, const std::string& str, int size = 12,
            const std::string& color = "black") {
    body_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
          << "\" font-family=\"sans-serif\" fill=\"" << color << "\">" << str << "</text>\n";
  }

  void save(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw MissingDataError("cannot write " + path.string());
    out << body_.str() << "</svg>\n";
  }

 private:
  double w_, h_;
  std::ostringstream body_;
};

// Simple x/y chart with axes, ticks and a legend.
void write_chart(const std::filesystem::path& path, const std::string& title,
                 const std::string& xlabel, const std::string& ylabel,
                 const std::vector<Series>& series) {
  const double W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmin > xmax) throw MissingDataError("chart '" + title + "' has no data");
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

  SvgCanvas svg(W, H);
  svg.line(ml, H - mb, W - mr, H - mb, "black", 1.0);
  svg.line(ml, mt, ml, H - mb, "black", 1.0);
  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + i * (xmax - xmin) / 5.0;
    const double yv = ymin + i * (ymax - ymin) / 5.0;
    std::ostringstream xs, ys;
    xs.precision(3);
    ys.precision(3);
    xs << xv;
    ys << yv;
    svg.line(px(xv), H - mb, px(xv), H - mb + 4, "black", 1.0);
    svg.text(px(xv) - 10, H - mb + 18, xs.str(), 10);
    svg.line(ml - 4, py(yv), ml, py(yv), "black", 1.0);
    svg.text(8, py(yv) + 4, ys.str(), 10);
  }
  svg.text(ml, mt - 12, title, 14);
  svg.text(W / 2 - 30, H - 12, xlabel, 12);
  svg.text(10, mt - 12, ylabel, 12);

  double ly = mt + 10;
  for (const auto& s : series) {
    std::vector<double> xs, ys;
    xs.reserve(s.x.size());
    ys.reserve(s.y.size());
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xs.push_back(px(s.x[i]));
      ys.push_back(py(s.y[i]));
    }
    svg.polyline(xs, ys, s.color, 1.8, s.dashed);
    for (std::size_t i = 0; i < xs.size(); ++i) svg.circle(xs[i], ys[i], 2.2, s.color);
    svg.line(W - mr - 130, ly, W - mr - 105, ly, s.color, 2.0);
    svg.text(W - mr - 100, ly + 4, s.label, 11);
    ly += 16;
  }
  svg.save(path);
}

struct Snapshot {
  std::vector<TrackSegment> segments;
  double half_width = 0.4;
  double dt = 0.1;
  double lf = 0.125, lr = 0.125, vx_floor = 0.1;
  std::vector<std::pair<int, std::vector<FrictionRegion>>> schedule;
};

Snapshot load_snapshot(const std::filesystem::path& run_dir) {
  std::ifstream in(run_dir / "scenario_snapshot.json");
  if (!in) throw MissingDataError("missing scenario_snapshot.json in " + run_dir.string());
  json j = json::parse(in);
  Snapshot snap;
  snap.half_width = j.at("half_width").get<double>();
  snap.dt = j.at("dt").get<double>();
  if (j.contains("lf")) snap.lf = j.at("lf").get<double>();
  if (j.contains("lr")) snap.lr = j.at("lr").get<double>();
  if (j.contains("vx_floor")) snap.vx_floor = j.at("vx_floor").get<double>();
  for (const auto& s : j.at("segments"))
    snap.segments.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
  for (const auto& e : j.at("friction_schedule")) {
    std::vector<FrictionRegion> regions;
    for (const auto& r : e.at("map").at("regions"))
      regions.push_back({r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()});
    snap.schedule.emplace_back(e.at("iteration").get<int>(), regions);
  }
  return snap;
}

struct MetricsRow {
  std::string kind, policy;
  int iter = 0, controlled_index = -1;
  double lap_time_s = 0.0;
  bool completed = false, violated = false;
};

std::vector<MetricsRow> load_metrics(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingDataError("missing " + file.string());
  std::vector<MetricsRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (cols.size() < 8) continue;
    MetricsRow r;
    r.kind = cols[0];
    r.policy = cols[1];
    r.iter = std::stoi(cols[2]);
    r.controlled_index = std::stoi(cols[3]);
    r.lap_time_s = (cols[5] == "nan") ? std::nan("") : std::stod(cols[5]);
    r.completed = cols[6] == "1";
    r.violated = cols[7] == "1";
    rows.push_back(r);
  }
  return rows;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

void emit_plots(const std::filesystem::path& run_dir) {
  const Snapshot snap = load_snapshot(run_dir);
  const Track track(snap.segments, snap.half_width);

  // Every metrics*.csv in the directory contributes series (a merged
  // comparison directory holds one file per policy).
  std::vector<MetricsRow> rows;
  std::vector<std::filesystem::path> metric_files;
  for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("metrics", 0) == 0 && entry.path().extension() == ".csv")
      metric_files.push_back(entry.path());
  }
  std::sort(metric_files.begin(), metric_files.end());
  if (metric_files.empty()) throw MissingDataError("no metrics csv in " + run_dir.string());
  for (const auto& f : metric_files) {
    auto part = load_metrics(f);
    rows.insert(rows.end(), part.begin(), part.end());
  }

  // Lap-time curve per policy (controlled laps only).
  {
    std::map<std::string, Series> by_policy;
    int color = 0;
    for (const auto& r : rows) {
      if (r.kind != "ctrl" || !r.completed) continue;
      auto [it, inserted] = by_policy.try_emplace(r.policy);
      if (inserted) {
        it->second.label = r.policy;
        it->second.color = kPalette[color++ % 6];
      }
      it->second.x.push_back(r.controlled_index);
      it->second.y.push_back(r.lap_time_s);
    }
    std::vector<Series> series;
    for (auto& [name, s] : by_policy) series.push_back(std::move(s));
    if (series.empty()) throw MissingDataError("no completed laps to plot");
    write_chart(run_dir / "lap_times.svg", "Lap time per iteration", "iteration", "lap time [s]",
                series);
  }

  // Track overlay with trajectories of the first and last completed
  // controlled laps, plus the first violated lap if any.
  {
    auto frenet_to_xy = [&](const VehicleState& x) {
      const Track::Pose p = track.centerline_pose(x.s);
      return std::pair<double, double>{p.x - x.e_y * std::sin(p.heading),
                                       p.y + x.e_y * std::cos(p.heading)};
    };

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    std::vector<std::pair<double, double>> center, inner, outer;
    const double L = track.total_length();
    for (double s = 0.0; s <= L + 1e-9; s += 0.05) {
      const Track::Pose p = track.centerline_pose(std::min(s, L - 1e-9));
      center.emplace_back(p.x, p.y);
      inner.emplace_back(p.x + snap.half_width * std::sin(p.heading),
                         p.y - snap.half_width * std::cos(p.heading));
      outer.emplace_back(p.x - snap.half_width * std::sin(p.heading),
                         p.y + snap.half_width * std::cos(p.heading));
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
    const double margin = snap.half_width + 0.3;
    xmin -= margin;
    xmax += margin;
    ymin -= margin;
    ymax += margin;
    const double W = 640, H = 560;
    const double scale = std::min((W - 40) / (xmax - xmin), (H - 60) / (ymax - ymin));
    auto px = [&](double x) { return 20 + (x - xmin) * scale; };
    auto py = [&](double y) { return H - 30 - (y - ymin) * scale; };

    SvgCanvas svg(W, H);
    auto draw_path = [&](const std::vector<std::pair<double, double>>& pts,
                         const std::string& color, double stroke, bool dashed = false) {
      std::vector<double> xs, ys;
      for (const auto& [x, y] : pts) {
        xs.push_back(px(x));
        ys.push_back(py(y));
      }
      svg.polyline(xs, ys, color, stroke, dashed);
    };
    draw_path(inner, "#444444", 1.5);
    draw_path(outer, "#444444", 1.5);
    draw_path(center, "#bbbbbb", 0.8, true);

    // Low-friction regions from the last scheduled map, drawn on the outer edge.
    if (!snap.schedule.empty()) {
      for (const auto& region : snap.schedule.back().second) {
        std::vector<std::pair<double, double>> seg;
        for (double s = region.s_start; s <= region.s_end; s += 0.05) {
          const Track::Pose p = track.centerline_pose(std::min(s, L - 1e-9));
          seg.emplace_back(p.x - snap.half_width * std::sin(p.heading),
                           p.y + snap.half_width * std::cos(p.heading));
        }
        draw_path(seg, "#d62728", 3.0);
      }
    }

    int first_ok = -1, last_ok = -1, first_bad = -1;
    for (const auto& r : rows) {
      if (r.kind != "ctrl") continue;
      if (r.completed && !r.violated) {
        if (first_ok < 0) first_ok = r.iter;
        last_ok = r.iter;
      } else if (r.violated && first_bad < 0) {
        first_bad = r.iter;
      }
    }
    double ly = 20;
    auto draw_iter = [&](int iter, const std::string& color, const std::string& label,
                         bool dashed) {
      if (iter < 0) return;
      const auto path = run_dir / ("iter_" + std::to_string(iter) + ".json");
      if (!std::filesystem::exists(path)) return;
      const IterationFile file = read_iteration_file(path);
      if (file.record.states.empty()) throw MissingDataError("empty trajectory in " + path.string());
      std::vector<std::pair<double, double>> pts;
      for (const auto& x : file.record.states) pts.push_back(frenet_to_xy(x));
      draw_path(pts, color, 1.6, dashed);
      svg.line(W - 190, ly, W - 165, ly, color, 2.0);
      svg.text(W - 160, ly + 4, label, 11);
      ly += 16;
    };
    draw_iter(first_ok, "#1f77b4", "first completed lap", false);
    if (last_ok != first_ok) draw_iter(last_ok, "#2ca02c", "last completed lap", false);
    draw_iter(first_bad, "#d62728", "violated lap", true);
    svg.text(20, 16, "Closed-loop trajectories (red edge: low friction)", 13);
    svg.save(run_dir / "track_trajectories.svg");
  }

  // Velocity trace and slip angles of the last completed lap.
  {
    int last_ok = -1;
    for (const auto& r : rows)
      if (r.kind == "ctrl" && r.completed && !r.violated) last_ok = r.iter;
    if (last_ok >= 0 &&
        std::filesystem::exists(run_dir / ("iter_" + std::to_string(last_ok) + ".json"))) {
      const IterationFile file =
          read_iteration_file(run_dir / ("iter_" + std::to_string(last_ok) + ".json"));
      Series v;
      v.label = "vx (lap " + std::to_string(last_ok) + ")";
      v.color = kPalette[0];
      for (const auto& x : file.record.states) {
        v.x.push_back(x.s);
        v.y.push_back(x.vx);
      }
      write_chart(run_dir / "velocity_trace.svg", "Realized longitudinal velocity", "s [m]",
                  "vx [m/s]", {v});

      VehicleParams params;  // tire constants do not matter for slip angles
      params.dt = snap.dt;
      params.lf = snap.lf;
      params.lr = snap.lr;
      params.vx_floor = snap.vx_floor;
      const auto slips =
          compute_slip_angles(file.record.states, file.record.inputs, params);
      Series sf, sr;
      sf.label = "front";
      sf.color = kPalette[0];
      sr.label = "rear";
      sr.color = kPalette[1];
      for (std::size_t t = 0; t < slips.size(); ++t) {
        sf.x.push_back(static_cast<double>(t) * snap.dt);
        sf.y.push_back(slips[t].front);
        sr.x.push_back(static_cast<double>(t) * snap.dt);
        sr.y.push_back(slips[t].rear);
      }
      write_chart(run_dir / "slip_angles.svg", "Slip angles along the lap", "time [s]",
                  "slip angle [rad]", {sf, sr});
    }
  }
}

}  // namespace mmlmpc
