#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "somaslam/dataset.hpp"
#include "somaslam/geometry.hpp"
#include "somaslam/graph.hpp"

namespace somaslam {

struct TimedPose {
  double timestamp = 0.0;
  Pose2 pose;
};

using TrajectoryEstimate = std::vector<TimedPose>;  // timestamps strictly increasing

struct ErrorSummary {
  double translational_mean = 0.0;  // meters
  double translational_std = 0.0;
  double rotational_mean = 0.0;  // degrees
  double rotational_std = 0.0;
  int relation_count = 0;  // matched relations
  int skipped_count = 0;   // relations without a timestamp match

  std::string to_text() const {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(4);
    ss << "translational error (m)   " << translational_mean << " +- " << translational_std << '\n'
       << "rotational error (deg)    " << rotational_mean << " +- " << rotational_std << '\n'
       << "relations matched         " << relation_count << '\n'
       << "relations skipped         " << skipped_count << '\n';
    return ss.str();
  }

  std::string to_record() const {
    std::ostringstream ss;
    ss << "trans_mean=" << translational_mean << " trans_std=" << translational_std
       << " rot_mean_deg=" << rotational_mean << " rot_std_deg=" << rotational_std
       << " relations=" << relation_count << " skipped=" << skipped_count;
    return ss.str();
  }
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

/// Index of the estimate pose nearest in time, or -1 if beyond tolerance.
inline int nearest_pose(const TrajectoryEstimate& est, double t, double tolerance) {
  if (est.empty()) return -1;
  const auto it = std::lower_bound(est.begin(), est.end(), t,
                                   [](const TimedPose& p, double v) { return p.timestamp < v; });
  int best = -1;
  double best_gap = tolerance;
  if (it != est.end() && std::abs(it->timestamp - t) <= best_gap) {
    best_gap = std::abs(it->timestamp - t);
    best = static_cast<int>(it - est.begin());
  }
  if (it != est.begin() && std::abs(std::prev(it)->timestamp - t) <= best_gap) {
    best = static_cast<int>(std::prev(it) - est.begin());
  }
  return best;
}

}  // namespace detail

/// Relation-based relative error: for each ground-truth relation, the SE(2)
/// difference between the estimated and true relative pose over the matched
/// timestamp pair. Means and population standard deviations; invariant to
/// rigid transforms of the whole estimate.
inline ErrorSummary relation_errors(const TrajectoryEstimate& estimate,
                                    const std::vector<GroundTruthRelation>& relations,
                                    double timestamp_tolerance = 0.1) {
  std::vector<double> trans, rot;
  int skipped = 0;
  for (const auto& rel : relations) {
    const int i1 = detail::nearest_pose(estimate, rel.t1, timestamp_tolerance);
    const int i2 = detail::nearest_pose(estimate, rel.t2, timestamp_tolerance);
    if (i1 < 0 || i2 < 0) {
      ++skipped;
      continue;
    }
    const Pose2 est_rel = se2_between(estimate[static_cast<size_t>(i1)].pose,
                                      estimate[static_cast<size_t>(i2)].pose);
    const Pose2 delta = se2_between(rel.relative_pose, est_rel);
    trans.push_back(std::hypot(delta.x, delta.y));
    rot.push_back(std::abs(delta.theta) * 180.0 / kPi);
  }
  if (trans.empty()) {
    throw EvaluationError("relation_errors: no relations matched the estimate timestamps");
  }

  auto mean_std = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());  // population std
    return std::make_pair(mean, std::sqrt(var));
  };

  ErrorSummary s;
  std::tie(s.translational_mean, s.translational_std) = mean_std(trans);
  std::tie(s.rotational_mean, s.rotational_std) = mean_std(rot);
  s.relation_count = static_cast<int>(trans.size());
  s.skipped_count = skipped;
  return s;
}

/// Writes "timestamp x y theta" rows at full float precision, LF endings.
inline void export_trajectory(const TrajectoryEstimate& estimate, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trajectory: " + path);
  for (const auto& p : estimate) {
    out << detail::fmt_double(p.timestamp) << ' ' << detail::fmt_double(p.pose.x) << ' '
        << detail::fmt_double(p.pose.y) << ' ' << detail::fmt_double(p.pose.theta) << '\n';
  }
}

inline TrajectoryEstimate parse_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory: " + path);
  TrajectoryEstimate out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 4) {
      throw ParseError(path, line_no, "expected 4 columns, got " + std::to_string(tok.size()));
    }
    TimedPose p;
    p.timestamp = detail::to_double(tok[0], path, line_no);
    p.pose = Pose2(detail::to_double(tok[1], path, line_no), detail::to_double(tok[2], path, line_no),
                   detail::to_double(tok[3], path, line_no));
    out.push_back(p);
  }
  return out;
}

struct RenderStyle {
  double pixels_per_meter = 40.0;
  double margin_meters = 1.0;
  bool draw_ground_truth = false;
  TrajectoryEstimate ground_truth;
};

/// Renders landmarks, the trajectory, and loop edges to an SVG. Landmarks
/// holding landmark-landmark edges get a distinct stroke. Output is
/// deterministic for identical inputs.
inline void render_map(const Graph& landmark_graph, const Graph& pose_graph,
                       const TrajectoryEstimate& estimate, const RenderStyle& style,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write svg: " + path);

  Vec2 lo(0.0, 0.0), hi(0.0, 0.0);
  bool any = false;
  auto extend = [&](const Vec2& p) {
    if (!any) {
      lo = hi = p;
      any = true;
    } else {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  };
  for (const auto& lm : landmark_graph.landmarks) {
    extend(lm.endpoints[0]);
    extend(lm.endpoints[1]);
  }
  for (const auto& p : estimate) extend(p.pose.translation());
  for (const auto& p : style.ground_truth) extend(p.pose.translation());

  const double m = style.margin_meters;
  lo -= Vec2(m, m);
  hi += Vec2(m, m);
  const double scale = style.pixels_per_meter;
  const double w = (hi.x() - lo.x()) * scale;
  const double h = (hi.y() - lo.y()) * scale;

  auto px = [&](const Vec2& p) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(2) << (p.x() - lo.x()) * scale << ','
       << (hi.y() - p.y()) * scale;  // y up
    return ss.str();
  };

  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << std::fixed
      << std::setprecision(2) << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << ' ' << h
      << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  std::vector<bool> has_ll(landmark_graph.landmarks.size(), false);
  for (const auto& e : landmark_graph.landmark_landmark_edges) {
    if (!e.active) continue;
    has_ll[static_cast<size_t>(e.landmark1_id)] = true;
    has_ll[static_cast<size_t>(e.landmark2_id)] = true;
  }
  for (const auto& lm : landmark_graph.landmarks) {
    const char* color = has_ll[static_cast<size_t>(lm.id)] ? "#d62728" : "#1f77b4";
    const auto a = px(lm.endpoints[0]);
    const auto b = px(lm.endpoints[1]);
    const auto comma_a = a.find(',');
    const auto comma_b = b.find(',');
    out << "<line x1=\"" << a.substr(0, comma_a) << "\" y1=\"" << a.substr(comma_a + 1)
        << "\" x2=\"" << b.substr(0, comma_b) << "\" y2=\"" << b.substr(comma_b + 1)
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
  }

  for (const auto& e : pose_graph.odometry_edges) {
    if (!e.is_loop || !e.active) continue;
    const Vec2 a = pose_graph.pose(e.pose_id_a).pose.translation();
    const Vec2 b = pose_graph.pose(e.pose_id_b).pose.translation();
    const auto pa = px(a), pb = px(b);
    out << "<line x1=\"" << pa.substr(0, pa.find(',')) << "\" y1=\"" << pa.substr(pa.find(',') + 1)
        << "\" x2=\"" << pb.substr(0, pb.find(',')) << "\" y2=\"" << pb.substr(pb.find(',') + 1)
        << "\" stroke=\"#bc8f5f\" stroke-width=\"1\" stroke-dasharray=\"4 2\"/>\n";
  }

  if (style.draw_ground_truth && style.ground_truth.size() > 1) {
    out << "<polyline fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"1\" points=\"";
    for (size_t i = 0; i < style.ground_truth.size(); ++i) {
      out << (i ? " " : "") << px(style.ground_truth[i].pose.translation());
    }
    out << "\"/>\n";
  }

  if (!estimate.empty()) {
    out << "<polyline fill=\"none\" stroke=\"#ff00ff\" stroke-width=\"1\" points=\"";
    for (size_t i = 0; i < estimate.size(); ++i) {
      out << (i ? " " : "") << px(estimate[i].pose.translation());
    }
    out << "\"/>\n";
  }

  out << "</svg>\n";
}

}  // namespace somaslam
