#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <optional>
#include <vector>

#include "somaslam/dataset.hpp"
#include "somaslam/error_models.hpp"
#include "somaslam/geometry.hpp"
#include "somaslam/graph.hpp"

namespace somaslam {

/// Point set accumulated from sparse scans over consecutive poses, expressed
/// in the anchor (first) pose's frame.
struct Multiscan {
  NodeId anchor_pose_id = -1;
  std::vector<Vec2> points;
  std::vector<NodeId> source_pose_ids;
};

/// Line fitted to a run of multiscan points, in the anchor frame.
struct LineSegment {
  LinePolar line;
  Vec2 endpoints[2] = {Vec2::Zero(), Vec2::Zero()};
  int inlier_count = 0;
  double residual_rms = 0.0;

  double length() const { return (endpoints[1] - endpoints[0]).norm(); }
};

struct FrontendParams {
  // multiscan sizing
  int window = 10;        // poses per multiscan
  int min_points = 40;    // flush early once this many points accumulated
  // split-and-merge
  double split_distance = 0.05;
  double merge_angle = 0.05;
  double merge_distance = 0.05;
  int min_segment_points = 6;
  double min_segment_length = 0.3;
  // association gates
  double gate_theta = 0.15;
  double gate_rho = 0.3;
  // pose-landmark measurement noise
  double sigma_rho = 0.05;
  double sigma_alpha = 0.02;

  Eigen::Matrix2d pose_landmark_information() const {
    Eigen::Matrix2d info = Eigen::Matrix2d::Zero();
    info(0, 0) = 1.0 / (sigma_rho * sigma_rho);
    info(1, 1) = 1.0 / (sigma_alpha * sigma_alpha);
    return info;
  }
};

/// Projects every valid beam of each scan into the frame of the first pose
/// (the anchor). Poses and scans are parallel arrays over the window.
inline Multiscan accumulate_multiscan(const std::vector<Pose2>& poses,
                                      const std::vector<SparseScan>& scans,
                                      const std::vector<NodeId>& pose_ids) {
  if (poses.empty() || poses.size() != scans.size() || poses.size() != pose_ids.size()) {
    throw std::invalid_argument("accumulate_multiscan: empty or mismatched window");
  }
  Multiscan ms;
  ms.anchor_pose_id = pose_ids.front();
  ms.source_pose_ids = pose_ids;
  const Pose2 anchor_inv = se2_inverse(poses.front());
  for (size_t i = 0; i < scans.size(); ++i) {
    const Pose2 rel = se2_compose(anchor_inv, poses[i]);
    for (const Beam& b : scans[i].beams) {
      if (!b.valid) continue;
      const Vec2 local(b.range * std::cos(b.bearing), b.range * std::sin(b.bearing));
      ms.points.push_back(se2_transform_point(rel, local));
    }
  }
  return ms;
}

namespace detail {

/// Total-least-squares line fit: normal direction from the smallest
/// eigenvector of the scatter matrix, rho from the centroid projection.
inline LinePolar fit_line_tls(const std::vector<Vec2>& pts, size_t begin, size_t end) {
  const double n = static_cast<double>(end - begin);
  Vec2 c = Vec2::Zero();
  for (size_t i = begin; i < end; ++i) c += pts[i];
  c /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (size_t i = begin; i < end; ++i) {
    const Vec2 d = pts[i] - c;
    sxx += d.x() * d.x();
    sxy += d.x() * d.y();
    syy += d.y() * d.y();
  }
  // smallest eigenvector of [[sxx, sxy], [sxy, syy]]
  const double tr = sxx + syy;
  const double det = sxx * syy - sxy * sxy;
  const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
  const double lmin = tr / 2.0 - disc;
  Vec2 normal;
  if (std::abs(sxy) > 1e-15) {
    normal = Vec2(lmin - syy, sxy).normalized();
  } else {
    normal = sxx <= syy ? Vec2(1.0, 0.0) : Vec2(0.0, 1.0);
  }
  const double theta = std::atan2(normal.y(), normal.x());
  return canonicalize({normal.dot(c), theta});
}

inline LineSegment make_segment(const std::vector<Vec2>& pts, size_t begin, size_t end) {
  LineSegment seg;
  seg.line = fit_line_tls(pts, begin, end);
  seg.inlier_count = static_cast<int>(end - begin);
  const Vec2 dir(-std::sin(seg.line.theta), std::cos(seg.line.theta));
  const Vec2 foot = seg.line.rho * Vec2(std::cos(seg.line.theta), std::sin(seg.line.theta));
  double tmin = std::numeric_limits<double>::infinity();
  double tmax = -std::numeric_limits<double>::infinity();
  double sq = 0.0;
  for (size_t i = begin; i < end; ++i) {
    const double d = point_line_distance(seg.line, pts[i]);
    sq += d * d;
    const double t = (pts[i] - foot).dot(dir);
    tmin = std::min(tmin, t);
    tmax = std::max(tmax, t);
  }
  seg.residual_rms = std::sqrt(sq / static_cast<double>(end - begin));
  seg.endpoints[0] = foot + tmin * dir;
  seg.endpoints[1] = foot + tmax * dir;
  return seg;
}

inline void split_recursive(const std::vector<Vec2>& pts, size_t begin, size_t end,
                            double split_distance, int min_points,
                            std::vector<std::pair<size_t, size_t>>& runs) {
  if (end - begin < static_cast<size_t>(std::max(2, min_points))) {
    runs.emplace_back(begin, end);
    return;
  }
  const Vec2& a = pts[begin];
  const Vec2& b = pts[end - 1];
  const Vec2 ab = b - a;
  const double len = ab.norm();
  double max_d = -1.0;
  size_t split = begin;
  for (size_t i = begin + 1; i + 1 < end; ++i) {
    double d;
    if (len < 1e-12) {
      d = (pts[i] - a).norm();
    } else {
      const Vec2 ap = pts[i] - a;
      d = std::abs(ab.x() * ap.y() - ab.y() * ap.x()) / len;
    }
    if (d > max_d) {
      max_d = d;
      split = i;
    }
  }
  if (max_d > split_distance) {
    split_recursive(pts, begin, split + 1, split_distance, min_points, runs);
    split_recursive(pts, split, end, split_distance, min_points, runs);
  } else {
    runs.emplace_back(begin, end);
  }
}

/// Orders multiscan points for chord splitting. Near-degenerate (1D) sets
/// are ordered by projection onto the principal axis; otherwise points are
/// sorted by angle around the centroid, cut at the largest angular gap.
/// Both orderings are covariant under rigid transforms.
inline std::vector<Vec2> order_points(const std::vector<Vec2>& pts) {
  if (pts.size() < 3) return pts;
  const double n = static_cast<double>(pts.size());
  Vec2 c = Vec2::Zero();
  for (const auto& p : pts) c += p;
  c /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : pts) {
    const Vec2 d = p - c;
    sxx += d.x() * d.x();
    sxy += d.x() * d.y();
    syy += d.y() * d.y();
  }
  const double tr = sxx + syy;
  const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - (sxx * syy - sxy * sxy)));
  const double lmax = tr / 2.0 + disc;
  const double lmin = tr / 2.0 - disc;

  std::vector<Vec2> out = pts;
  if (lmax <= 0.0 || lmin / lmax < 0.01) {
    Vec2 axis;
    if (std::abs(sxy) > 1e-15) {
      axis = Vec2(sxy, lmax - sxx).normalized();
    } else {
      axis = sxx >= syy ? Vec2(1.0, 0.0) : Vec2(0.0, 1.0);
    }
    std::sort(out.begin(), out.end(), [&](const Vec2& a, const Vec2& b) {
      return (a - c).dot(axis) < (b - c).dot(axis);
    });
    return out;
  }

  std::vector<std::pair<double, size_t>> ang(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    ang[i] = {std::atan2(pts[i].y() - c.y(), pts[i].x() - c.x()), i};
  }
  std::sort(ang.begin(), ang.end());
  // start after the largest angular gap so the cut point is transform-invariant
  size_t cut = 0;
  double best_gap = -1.0;
  for (size_t i = 0; i < ang.size(); ++i) {
    const size_t j = (i + 1) % ang.size();
    double gap = ang[j].first - ang[i].first;
    if (j == 0) gap += 2.0 * kPi;
    if (gap > best_gap) {
      best_gap = gap;
      cut = j;
    }
  }
  for (size_t i = 0; i < ang.size(); ++i) {
    out[i] = pts[ang[(cut + i) % ang.size()].second];
  }
  return out;
}

}  // namespace detail

namespace detail {

inline bool runs_collinear(const std::vector<Vec2>& pts, std::pair<size_t, size_t> a,
                           std::pair<size_t, size_t> b, const FrontendParams& params) {
  const LinePolar la = fit_line_tls(pts, a.first, a.second);
  const LinePolar lb = fit_line_tls(pts, b.first, b.second);
  const double dtheta = std::abs(wrap_line_angle(la.theta - lb.theta));
  const double flip = std::abs(wrap_angle(la.theta - lb.theta)) > kPi / 2.0 ? -1.0 : 1.0;
  const double drho = std::abs(la.rho - flip * lb.rho);
  return dtheta < params.merge_angle && drho < params.merge_distance;
}

}  // namespace detail

/// Split-and-merge extraction: ordered points are recursively split at the
/// point of maximum chord distance, runs are fit by total least squares,
/// collinear adjacent runs are merged (cyclically, since the ordering of a
/// closed perimeter scan may cut through a wall), and short or
/// under-supported segments are dropped.
inline std::vector<LineSegment> extract_segments(const Multiscan& ms, const FrontendParams& params) {
  if (ms.points.size() < static_cast<size_t>(params.min_segment_points)) return {};

  const std::vector<Vec2> pts = detail::order_points(ms.points);
  std::vector<std::pair<size_t, size_t>> runs;
  detail::split_recursive(pts, 0, pts.size(), params.split_distance, params.min_segment_points, runs);

  // merge collinear adjacent runs
  std::vector<std::pair<size_t, size_t>> merged;
  for (const auto& run : runs) {
    if (!merged.empty() && detail::runs_collinear(pts, merged.back(), run, params)) {
      merged.back().second = run.second;
      continue;
    }
    merged.push_back(run);
  }

  // wrap-around: the last run may continue the first one
  std::vector<Vec2> wrap_points;
  if (merged.size() >= 2 && detail::runs_collinear(pts, merged.back(), merged.front(), params)) {
    const auto last = merged.back();
    const auto first = merged.front();
    merged.pop_back();
    merged.erase(merged.begin());
    wrap_points.assign(pts.begin() + static_cast<long>(last.first),
                       pts.begin() + static_cast<long>(last.second));
    wrap_points.insert(wrap_points.end(), pts.begin() + static_cast<long>(first.first),
                       pts.begin() + static_cast<long>(first.second));
  }

  std::vector<LineSegment> out;
  auto emit = [&](const LineSegment& seg, size_t count) {
    if (count < static_cast<size_t>(params.min_segment_points)) return;
    if (seg.length() < params.min_segment_length) return;
    out.push_back(seg);
  };
  if (!wrap_points.empty()) {
    emit(detail::make_segment(wrap_points, 0, wrap_points.size()), wrap_points.size());
  }
  for (const auto& [begin, end] : merged) {
    emit(detail::make_segment(pts, begin, end), end - begin);
  }
  return out;
}

/// Expresses an anchor-frame segment in the global frame via the anchor pose.
inline LineSegment segment_to_global(const LineSegment& seg, const Pose2& anchor) {
  LineSegment g = seg;
  g.line = line_from_frame(anchor, seg.line);
  g.endpoints[0] = se2_transform_point(anchor, seg.endpoints[0]);
  g.endpoints[1] = se2_transform_point(anchor, seg.endpoints[1]);
  return g;
}

namespace detail {

/// Angular difference and aligned rho difference of two lines under the
/// undirected-line symmetry.
inline std::pair<double, double> line_gap(const LinePolar& a, const LinePolar& b) {
  const double dtheta = wrap_line_angle(a.theta - b.theta);
  const double flip = std::abs(wrap_angle(a.theta - b.theta)) > kPi / 2.0 ? -1.0 : 1.0;
  const double drho = a.rho - flip * b.rho;
  return {std::abs(dtheta), std::abs(drho)};
}

/// True iff the projections of the two segments onto `line`'s direction overlap.
inline bool segments_overlap_along(const LinePolar& line, const Vec2* ea, const Vec2* eb) {
  const Vec2 dir(-std::sin(line.theta), std::cos(line.theta));
  double a0 = ea[0].dot(dir), a1 = ea[1].dot(dir);
  double b0 = eb[0].dot(dir), b1 = eb[1].dot(dir);
  if (a0 > a1) std::swap(a0, a1);
  if (b0 > b1) std::swap(b0, b1);
  return std::min(a1, b1) - std::max(a0, b0) > 0.0;
}

}  // namespace detail

/// Nearest gating landmark for a global-frame segment, or none. Gates:
/// angular difference under line symmetry < gate_theta, perpendicular
/// distance < gate_rho, positive overlap along the line direction. Ties are
/// broken by the smallest combined normalized distance.
inline std::optional<NodeId> associate_segment(const LineSegment& global_seg,
                                               const std::vector<LineLandmark>& landmarks,
                                               const FrontendParams& params) {
  std::optional<NodeId> best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& lm : landmarks) {
    const auto [dtheta, drho] = detail::line_gap(global_seg.line, lm.line);
    if (dtheta >= params.gate_theta || drho >= params.gate_rho) continue;
    if (!detail::segments_overlap_along(lm.line, global_seg.endpoints, lm.endpoints)) continue;
    const double nd = std::hypot(drho / params.gate_rho, dtheta / params.gate_theta);
    if (nd < best_dist) {
      best_dist = nd;
      best = lm.id;
    }
  }
  return best;
}

/// Creates or updates a landmark for an observed segment and emits the
/// pose-landmark constraint. The segment is given in the observing pose's
/// frame; `observer` is that pose's current estimate.
inline std::pair<NodeId, PoseLandmarkEdge> upsert_landmark(const LineSegment& seg,
                                                           NodeId observer_id,
                                                           const Pose2& observer,
                                                           std::optional<NodeId> association,
                                                           Graph& graph,
                                                           const FrontendParams& params) {
  const LineSegment global_seg = segment_to_global(seg, observer);
  NodeId lm_id;
  if (association) {
    lm_id = *association;
    LineLandmark& lm = graph.landmark(lm_id);
    // extend the extent to cover the new segment's projection onto the landmark line
    const Vec2 dir(-std::sin(lm.line.theta), std::cos(lm.line.theta));
    const Vec2 foot = lm.line.rho * Vec2(std::cos(lm.line.theta), std::sin(lm.line.theta));
    double tmin = std::min((lm.endpoints[0] - foot).dot(dir), (lm.endpoints[1] - foot).dot(dir));
    double tmax = std::max((lm.endpoints[0] - foot).dot(dir), (lm.endpoints[1] - foot).dot(dir));
    for (const Vec2& e : global_seg.endpoints) {
      const double t = (e - foot).dot(dir);
      tmin = std::min(tmin, t);
      tmax = std::max(tmax, t);
    }
    lm.endpoints[0] = foot + tmin * dir;
    lm.endpoints[1] = foot + tmax * dir;
    lm.length = tmax - tmin;
    lm.support += 1;
  } else {
    lm_id = graph.add_landmark(global_seg.line, global_seg.endpoints[0], global_seg.endpoints[1]);
    graph.landmark(lm_id).support = 1;
  }

  PoseLandmarkEdge edge;
  edge.pose_id = observer_id;
  edge.landmark_id = lm_id;
  edge.rho = seg.line.rho;
  edge.alpha = seg.line.theta;
  edge.information = params.pose_landmark_information();
  graph.pose_landmark_edges.push_back(edge);
  return {lm_id, edge};
}

}  // namespace somaslam
