#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "somaslam/geometry.hpp"

namespace somaslam {

using NodeId = std::int64_t;

/// Undirected line feature in the global frame.
struct LineLandmark {
  LinePolar line;           // canonical (rho >= 0)
  Vec2 endpoints[2] = {Vec2::Zero(), Vec2::Zero()};
  double length = 0.0;
  NodeId id = -1;           // creation sequence number, monotone increasing
  int support = 0;          // pose-landmark edges attached
};

/// Constraint tying a pose to a line landmark. The measurement is the
/// landmark observed in the pose's frame.
struct PoseLandmarkEdge {
  NodeId pose_id = -1;
  NodeId landmark_id = -1;
  double rho = 0.0;    // measured perpendicular distance
  double alpha = 0.0;  // measured normal direction, wrapped
  Eigen::Matrix2d information = Eigen::Matrix2d::Identity();
  bool active = true;
};

/// Soft Manhattan-world constraint between two landmarks. l1 is the anchor
/// (older landmark), l2 the variable; the measurement is the ideal relative
/// orientation delta_theta_ideal in {0, +-pi/2, +-pi}.
struct LandmarkLandmarkEdge {
  NodeId landmark1_id = -1;
  NodeId landmark2_id = -1;
  double delta_theta_ideal = 0.0;
  double weight = 0.0;  // len_1 + len_2
  bool active = true;
};

/// Relative SE(2) constraint between two poses (odometry or loop closure).
struct OdometryEdge {
  NodeId pose_id_a = -1;
  NodeId pose_id_b = -1;
  Pose2 measurement;  // pose of b in a's frame
  Eigen::Matrix3d information = Eigen::Matrix3d::Identity();
  bool is_loop = false;
  bool active = true;
};

struct PoseNode {
  NodeId id = -1;
  Pose2 pose;
  double timestamp = 0.0;
};

/// A graph of poses and line landmarks with the three edge types. The
/// landmark graph uses all of them; the pose graph holds only poses and
/// odometry/loop edges.
struct Graph {
  std::vector<PoseNode> poses;
  std::vector<LineLandmark> landmarks;
  std::vector<OdometryEdge> odometry_edges;
  std::vector<PoseLandmarkEdge> pose_landmark_edges;
  std::vector<LandmarkLandmarkEdge> landmark_landmark_edges;

  NodeId add_pose(const Pose2& p, double timestamp = 0.0) {
    const NodeId id = static_cast<NodeId>(poses.size());
    poses.push_back({id, p, timestamp});
    return id;
  }

  NodeId add_landmark(const LinePolar& line, const Vec2& e0, const Vec2& e1) {
    LineLandmark lm;
    lm.line = canonicalize(line);
    lm.endpoints[0] = e0;
    lm.endpoints[1] = e1;
    lm.length = (e1 - e0).norm();
    lm.id = static_cast<NodeId>(landmarks.size());
    landmarks.push_back(lm);
    return lm.id;
  }

  const PoseNode& pose(NodeId id) const { return poses.at(static_cast<size_t>(id)); }
  PoseNode& pose(NodeId id) { return poses.at(static_cast<size_t>(id)); }
  const LineLandmark& landmark(NodeId id) const { return landmarks.at(static_cast<size_t>(id)); }
  LineLandmark& landmark(NodeId id) { return landmarks.at(static_cast<size_t>(id)); }
};

/// The paper's dual structure: a landmark graph optimized locally feeding
/// odometry constraints into a pose-only graph where loops are closed.
struct SlamGraphs {
  Graph landmark_graph;
  Graph pose_graph;
};

}  // namespace somaslam
