#pragma once

#include <optional>
#include <random>
#include <vector>

#include "somaslam/config.hpp"
#include "somaslam/dataset.hpp"
#include "somaslam/geometry.hpp"

namespace somaslam {

struct Wall {
  Vec2 a;
  Vec2 b;
  bool manhattan = true;  // generator ground truth: wall is axis-aligned
};

struct SynthResult {
  CarmenLog log;
  std::vector<GroundTruthRelation> relations;
  std::vector<Pose2> true_poses;
  std::vector<double> timestamps;
  std::vector<Wall> walls;
};

namespace detail {

/// First positive ray-segment intersection distance, if any.
inline std::optional<double> ray_segment(const Vec2& origin, const Vec2& dir, const Wall& w) {
  const Vec2 s = w.b - w.a;
  const double denom = dir.x() * s.y() - dir.y() * s.x();
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const Vec2 d = w.a - origin;
  const double t = (d.x() * s.y() - d.y() * s.x()) / denom;
  const double u = (d.x() * dir.y() - d.y() * dir.x()) / denom;
  if (t <= 1e-9 || u < 0.0 || u > 1.0) return std::nullopt;
  return t;
}

inline double raycast(const Vec2& origin, double angle, const std::vector<Wall>& walls,
                      double max_range) {
  const Vec2 dir(std::cos(angle), std::sin(angle));
  double best = max_range;
  for (const Wall& w : walls) {
    if (const auto t = ray_segment(origin, dir, w)) best = std::min(best, *t);
  }
  return best;
}

/// Intersection of two infinite lines through (a0, a1) and (b0, b1).
inline Vec2 line_line(const Vec2& a0, const Vec2& a1, const Vec2& b0, const Vec2& b1) {
  const Vec2 r = a1 - a0, s = b1 - b0;
  const double denom = r.x() * s.y() - r.y() * s.x();
  const double t = ((b0 - a0).x() * s.y() - (b0 - a0).y() * s.x()) / denom;
  return a0 + t * r;
}

/// Waypoint loop for driving the robot around the world interior.
inline std::vector<Vec2> path_waypoints(const SynthConfig& cfg, bool& closed) {
  const double hw = cfg.width / 2.0, hh = cfg.height / 2.0, m = cfg.margin;
  if (cfg.world == "l_corridor") {
    closed = false;
    // two legs meeting at the origin corner, path along the centerline
    return {Vec2(-cfg.width + m, 0.0), Vec2(0.0, 0.0), Vec2(0.0, cfg.height - m)};
  }
  closed = true;
  return {Vec2(-hw + m, -hh + m), Vec2(hw - m, -hh + m), Vec2(hw - m, hh - m),
          Vec2(-hw + m, hh - m)};
}

}  // namespace detail

inline std::vector<Wall> make_world(const SynthConfig& cfg) {
  const double hw = cfg.width / 2.0, hh = cfg.height / 2.0;
  if (cfg.world == "rectangle" || cfg.world == "mixed") {
    std::vector<Wall> walls = {
        {{-hw, -hh}, {hw, -hh}, true},   // south
        {{hw, -hh}, {hw, hh}, true},     // east
        {{hw, hh}, {-hw, hh}, true},     // north
        {{-hw, hh}, {-hw, -hh}, true},   // west
    };
    if (cfg.world == "mixed") {
      // tilt the north wall about its midpoint and re-join it to its
      // neighbours so the room stays closed
      const double phi = cfg.off_angle_deg * kPi / 180.0;
      const Vec2 mid(0.0, hh);
      const Vec2 dir(std::cos(kPi + phi), std::sin(kPi + phi));
      const Vec2 p0 = mid - 2.0 * hw * dir, p1 = mid + 2.0 * hw * dir;
      Wall& north = walls[2];
      north.a = detail::line_line(p0, p1, walls[1].a, walls[1].b);  // meet east wall
      north.b = detail::line_line(p0, p1, walls[3].a, walls[3].b);  // meet west wall
      north.manhattan = false;
      walls[1].b = north.a;
      walls[3].a = north.b;
    }
    return walls;
  }
  if (cfg.world == "l_corridor") {
    const double w = cfg.corridor_width / 2.0;
    const double lx = cfg.width, ly = cfg.height;
    // L of two legs: along -x to origin, then up +y; walls offset by +-w
    return {
        {{-lx, -w}, {w, -w}, true},    // outer south
        {{w, -w}, {w, ly}, true},      // outer east
        {{-lx, w}, {-w, w}, true},     // inner south
        {{-w, w}, {-w, ly}, true},     // inner west
        {{-lx, -w}, {-lx, w}, true},   // west cap
        {{-w, ly}, {w, ly}, true},     // north cap
    };
  }
  throw ConfigError("synth: unknown world '" + cfg.world + "'");
}

/// Generates a synthetic dataset: a robot driving the world with simulated
/// range scans and noisy odometry, plus ground-truth relations. Deterministic
/// per seed.
inline SynthResult synthesize(const SynthConfig& cfg, std::uint64_t seed) {
  SynthResult out;
  out.walls = make_world(cfg);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // true pose sequence: straight runs between waypoints, in-place turns
  bool closed = false;
  const auto wp = detail::path_waypoints(cfg, closed);
  std::vector<Pose2> poses;
  Vec2 at = wp[0];
  double heading = std::atan2((wp[1] - wp[0]).y(), (wp[1] - wp[0]).x());
  poses.emplace_back(at.x(), at.y(), heading);
  const size_t legs = closed ? wp.size() * static_cast<size_t>(cfg.laps) : wp.size() - 1;
  for (size_t leg = 0; leg < legs; ++leg) {
    const Vec2 target = wp[(leg + 1) % wp.size()];
    const double want = std::atan2((target - at).y(), (target - at).x());
    // turn in place
    while (std::abs(wrap_angle(want - heading)) > cfg.turn_step / 2.0) {
      const double d = wrap_angle(want - heading);
      heading = wrap_angle(heading + std::clamp(d, -cfg.turn_step, cfg.turn_step));
      poses.emplace_back(at.x(), at.y(), heading);
    }
    heading = want;
    // drive the leg
    double dist = (target - at).norm();
    while (dist > cfg.step_length / 2.0) {
      const double step = std::min(cfg.step_length, dist);
      at += step * Vec2(std::cos(heading), std::sin(heading));
      poses.emplace_back(at.x(), at.y(), heading);
      dist -= step;
    }
  }

  // noisy odometry chained from noisy relative motions
  std::vector<Pose2> odom;
  odom.emplace_back(0.0, 0.0, 0.0);
  for (size_t i = 1; i < poses.size(); ++i) {
    Pose2 delta = se2_between(poses[i - 1], poses[i]);
    delta = Pose2(delta.x + cfg.odom_sigma_xy * gauss(rng), delta.y + cfg.odom_sigma_xy * gauss(rng),
                  delta.theta + cfg.odom_sigma_theta * gauss(rng));
    odom.push_back(se2_compose(odom.back(), delta));
  }

  const double fov = cfg.fov_deg * kPi / 180.0;
  const double start = cfg.start_angle_deg * kPi / 180.0;
  for (size_t i = 0; i < poses.size(); ++i) {
    RawScan s;
    s.timestamp = static_cast<double>(i) * cfg.dt;
    s.logger_timestamp = s.timestamp;
    s.host = "synth";
    s.odom_pose = odom[i];
    s.laser_pose = odom[i];
    s.ranges.reserve(static_cast<size_t>(cfg.beams));
    for (int b = 0; b < cfg.beams; ++b) {
      const double bearing =
          cfg.beams > 1 ? start + static_cast<double>(b) * fov / (cfg.beams - 1) : start;
      double r = detail::raycast(poses[i].translation(), poses[i].theta + bearing, out.walls,
                                 cfg.max_range);
      if (r < cfg.max_range && cfg.range_sigma > 0.0) {
        r = std::max(0.0, r + cfg.range_sigma * gauss(rng));
      }
      s.ranges.push_back(std::min(r, cfg.max_range));
    }
    out.log.scans.push_back(std::move(s));
    out.timestamps.push_back(static_cast<double>(i) * cfg.dt);
  }
  out.true_poses = poses;

  // relations over short, medium and loop-scale gaps
  for (const size_t gap : {size_t{1}, size_t{10}, size_t{50}}) {
    for (size_t i = 0; i + gap < poses.size(); i += 5) {
      GroundTruthRelation r;
      r.t1 = out.timestamps[i];
      r.t2 = out.timestamps[i + gap];
      r.relative_pose = se2_between(poses[i], poses[i + gap]);
      out.relations.push_back(r);
    }
  }
  return out;
}

}  // namespace somaslam
