#pragma once

#include <Eigen/Core>

#include "somaslam/geometry.hpp"
#include "somaslam/graph.hpp"

namespace somaslam {

/// Pose-landmark residual: measurement minus the landmark expressed in the
/// pose's frame. The angular component is resolved under the undirected-line
/// ambiguity to (-pi/2, pi/2]; when that flips the predicted direction by pi,
/// the predicted rho changes sign as well.
inline Eigen::Vector2d pose_landmark_error(const Pose2& pose, const LinePolar& landmark,
                                           double meas_rho, double meas_alpha) {
  const double f_rho = landmark.rho - (pose.x * std::cos(landmark.theta) + pose.y * std::sin(landmark.theta));
  const double f_alpha = landmark.theta - pose.theta;
  const double d_raw = wrap_angle(meas_alpha - f_alpha);
  const bool flipped = d_raw > kPi / 2.0 || d_raw <= -kPi / 2.0;
  const double s = flipped ? -1.0 : 1.0;
  return {meas_rho - s * f_rho, wrap_line_angle(d_raw)};
}

struct PoseLandmarkJacobians {
  Eigen::Matrix<double, 2, 3> d_pose;      // w.r.t. (x, y, theta)
  Eigen::Matrix<double, 2, 2> d_landmark;  // w.r.t. (rho, theta)
};

inline PoseLandmarkJacobians pose_landmark_jacobians(const Pose2& pose, const LinePolar& landmark,
                                                     double meas_alpha) {
  const double f_alpha = landmark.theta - pose.theta;
  const double d_raw = wrap_angle(meas_alpha - f_alpha);
  const double s = (d_raw > kPi / 2.0 || d_raw <= -kPi / 2.0) ? -1.0 : 1.0;
  const double c = std::cos(landmark.theta), sn = std::sin(landmark.theta);

  PoseLandmarkJacobians J;
  J.d_pose << s * c, s * sn, 0.0,
              0.0,   0.0,    1.0;
  J.d_landmark << -s, -s * (pose.x * sn - pose.y * c),
                   0.0, -1.0;
  return J;
}

/// Landmark-landmark residual: ideal orientation of l2 relative to the anchor
/// l1 minus l2's estimated orientation, on the undirected-line circle.
inline double landmark_landmark_error(double theta1, double theta2, double delta_theta_ideal) {
  return wrap_line_angle(delta_theta_ideal + theta1 - theta2);
}

struct LandmarkLandmarkJacobians {
  Eigen::Matrix<double, 1, 2> d_l1;  // w.r.t. (rho1, theta1)
  Eigen::Matrix<double, 1, 2> d_l2;  // w.r.t. (rho2, theta2)
};

inline LandmarkLandmarkJacobians landmark_landmark_jacobians() {
  LandmarkLandmarkJacobians J;
  J.d_l1 << 0.0, 1.0;
  J.d_l2 << 0.0, -1.0;
  return J;
}

/// SE(2) relative-pose residual: z^-1 (+) (a^-1 (+) b), heading wrapped.
inline Eigen::Vector3d odometry_error(const Pose2& a, const Pose2& b, const Pose2& z) {
  const Pose2 rel = se2_between(a, b);
  const Pose2 e = se2_between(z, rel);
  return {e.x, e.y, e.theta};
}

struct OdometryJacobians {
  Eigen::Matrix3d d_a;
  Eigen::Matrix3d d_b;
};

inline OdometryJacobians odometry_jacobians(const Pose2& a, const Pose2& b, const Pose2& z) {
  const double ca = std::cos(a.theta), sa = std::sin(a.theta);
  const double cz = std::cos(z.theta), sz = std::sin(z.theta);
  Eigen::Matrix2d RaT, RzT, RaTp;
  RaT << ca, sa, -sa, ca;
  RzT << cz, sz, -sz, cz;
  // d(R(a)^T)/d(theta_a)
  RaTp << -sa, ca, -ca, -sa;
  const Eigen::Vector2d dt(b.x - a.x, b.y - a.y);

  OdometryJacobians J;
  J.d_a.setZero();
  J.d_a.block<2, 2>(0, 0) = -RzT * RaT;
  J.d_a.block<2, 1>(0, 2) = RzT * RaTp * dt;
  J.d_a(2, 2) = -1.0;
  J.d_b.setZero();
  J.d_b.block<2, 2>(0, 0) = RzT * RaT;
  J.d_b(2, 2) = 1.0;
  return J;
}

}  // namespace somaslam
