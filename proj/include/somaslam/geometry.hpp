#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace somaslam {

using Vec2 = Eigen::Vector2d;

constexpr double kPi = 3.141592653589793238462643383279502884;

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  if (!std::isfinite(a)) {
    throw std::invalid_argument("wrap_angle: non-finite input");
  }
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) {
    r += 2.0 * kPi;
  }
  return r;
}

/// Wraps an undirected-line angular residual to (-pi/2, pi/2].
/// Lines have 180-degree symmetry, so residuals are resolved to the
/// minimal-magnitude representative by adding +-pi.
inline double wrap_line_angle(double a) {
  double r = wrap_angle(a);
  if (r > kPi / 2.0) {
    r -= kPi;
  } else if (r <= -kPi / 2.0) {
    r += kPi;
  }
  return r;
}

/// SE(2) robot pose. theta is stored wrapped to (-pi, pi].
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}

  Vec2 translation() const { return {x, y}; }
};

inline Pose2 se2_compose(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta);
}

inline Pose2 se2_inverse(const Pose2& a) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  return Pose2(-(c * a.x + s * a.y), -(-s * a.x + c * a.y), -a.theta);
}

/// Relative pose of b expressed in a's frame: a^-1 (+) b. Computed directly
/// so that se2_between(a, a) is exactly the identity.
inline Pose2 se2_between(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  const double dx = b.x - a.x, dy = b.y - a.y;
  return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta);
}

inline Vec2 se2_transform_point(const Pose2& p, const Vec2& pt) {
  const double c = std::cos(p.theta), s = std::sin(p.theta);
  return {p.x + c * pt.x() - s * pt.y(), p.y + s * pt.x() + c * pt.y()};
}

/// Line in polar form: rho is the signed perpendicular distance from the
/// frame origin, theta the direction of the line normal.
struct LinePolar {
  double rho = 0.0;
  double theta = 0.0;

  LinePolar() = default;
  LinePolar(double rho_, double theta_) : rho(rho_), theta(theta_) {}
};

/// Canonical form: rho >= 0 with theta in (-pi, pi]; when rho == 0 the
/// residual direction ambiguity is fixed by requiring theta in (-pi/2, pi/2].
inline LinePolar canonicalize(const LinePolar& l) {
  double rho = l.rho;
  double theta = wrap_angle(l.theta);
  if (rho < 0.0) {
    rho = -rho;
    theta = wrap_angle(theta + kPi);
  }
  if (rho == 0.0 && (theta > kPi / 2.0 || theta <= -kPi / 2.0)) {
    theta = wrap_line_angle(theta);
  }
  return {rho, theta};
}

/// Expresses a global-frame line in the frame of `pose`.
inline LinePolar line_to_frame(const Pose2& pose, const LinePolar& line) {
  const double rho = line.rho - (pose.x * std::cos(line.theta) + pose.y * std::sin(line.theta));
  const double theta = wrap_angle(line.theta - pose.theta);
  return canonicalize({rho, theta});
}

/// Inverse of line_to_frame: a line observed in `pose`'s frame, in global coordinates.
inline LinePolar line_from_frame(const Pose2& pose, const LinePolar& line) {
  const double theta = wrap_angle(line.theta + pose.theta);
  const double rho = line.rho + pose.x * std::cos(theta) + pose.y * std::sin(theta);
  return canonicalize({rho, theta});
}

/// Signed distance of a point to the (infinite) line.
inline double point_line_distance(const LinePolar& l, const Vec2& p) {
  return p.x() * std::cos(l.theta) + p.y() * std::sin(l.theta) - l.rho;
}

/// Distance of a point to the segment [a, b], clamped to the segment extent.
inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) {
    return (p - a).norm();
  }
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

/// True iff segments [a1,a2] and [b1,b2] intersect (touching counts).
inline bool segments_intersect(const Vec2& a1, const Vec2& a2, const Vec2& b1, const Vec2& b2) {
  auto cross = [](const Vec2& u, const Vec2& v) { return u.x() * v.y() - u.y() * v.x(); };
  const Vec2 r = a2 - a1, s = b2 - b1;
  const double rxs = cross(r, s);
  const double qpxr = cross(b1 - a1, r);
  if (rxs == 0.0) {
    if (qpxr != 0.0) return false;  // parallel, non-collinear
    // collinear: overlap test on the dominant axis
    const double rr = r.dot(r);
    if (rr == 0.0) return (b1 - a1).squaredNorm() == 0.0 || (b2 - a1).squaredNorm() == 0.0;
    double t0 = (b1 - a1).dot(r) / rr;
    double t1 = (b2 - a1).dot(r) / rr;
    if (t0 > t1) std::swap(t0, t1);
    return t0 <= 1.0 && t1 >= 0.0;
  }
  const double t = cross(b1 - a1, s) / rxs;
  const double u = qpxr / rxs;
  return t >= 0.0 && t <= 1.0 && u >= 0.0 && u <= 1.0;
}

}  // namespace somaslam
