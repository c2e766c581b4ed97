#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <boost/math/distributions/chi_squared.hpp>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "somaslam/error_models.hpp"
#include "somaslam/graph.hpp"

namespace somaslam {

/// Flat parameter vector over the graph: one (x, y, theta) block per pose,
/// one (rho, theta) block per landmark.
struct StateVector {
  Eigen::VectorXd x;
  std::map<NodeId, int> pose_offset;      // node id -> offset into x
  std::map<NodeId, int> landmark_offset;  // node id -> offset into x

  static StateVector from_graph(const Graph& g) {
    StateVector s;
    int off = 0;
    for (const auto& p : g.poses) {
      s.pose_offset[p.id] = off;
      off += 3;
    }
    for (const auto& l : g.landmarks) {
      s.landmark_offset[l.id] = off;
      off += 2;
    }
    s.x.resize(off);
    for (const auto& p : g.poses) {
      const int o = s.pose_offset[p.id];
      s.x[o] = p.pose.x;
      s.x[o + 1] = p.pose.y;
      s.x[o + 2] = p.pose.theta;
    }
    for (const auto& l : g.landmarks) {
      const int o = s.landmark_offset[l.id];
      s.x[o] = l.line.rho;
      s.x[o + 1] = l.line.theta;
    }
    return s;
  }

  Pose2 pose(NodeId id) const {
    const int o = pose_offset.at(id);
    return Pose2(x[o], x[o + 1], x[o + 2]);
  }
  LinePolar landmark(NodeId id) const {
    const int o = landmark_offset.at(id);
    return LinePolar(x[o], x[o + 1]);
  }

  /// Wraps pose headings and re-canonicalizes landmark lines (rho >= 0).
  void normalize() {
    for (const auto& [id, o] : pose_offset) {
      x[o + 2] = wrap_angle(x[o + 2]);
    }
    for (const auto& [id, o] : landmark_offset) {
      const LinePolar c = canonicalize({x[o], x[o + 1]});
      x[o] = c.rho;
      x[o + 1] = c.theta;
    }
  }

  void write_to(Graph& g) const {
    for (auto& p : g.poses) p.pose = pose(p.id);
    for (auto& l : g.landmarks) l.line = canonicalize(landmark(l.id));
  }

  int dim() const { return static_cast<int>(x.size()); }
};

/// Gauss-Newton normal equations of the graph at a state.
struct LinearSystem {
  Eigen::SparseMatrix<double> H;
  Eigen::VectorXd b;
  double chi2 = 0.0;
};

/// Total weighted squared error over all active edges.
inline double total_objective(const Graph& g, const StateVector& s) {
  double chi2 = 0.0;
  for (const auto& e : g.odometry_edges) {
    if (!e.active) continue;
    const Eigen::Vector3d r = odometry_error(s.pose(e.pose_id_a), s.pose(e.pose_id_b), e.measurement);
    chi2 += r.dot(e.information * r);
  }
  for (const auto& e : g.pose_landmark_edges) {
    if (!e.active) continue;
    const Eigen::Vector2d r = pose_landmark_error(s.pose(e.pose_id), s.landmark(e.landmark_id), e.rho, e.alpha);
    chi2 += r.dot(e.information * r);
  }
  for (const auto& e : g.landmark_landmark_edges) {
    if (!e.active) continue;
    const LinePolar l1 = s.landmark(e.landmark1_id);
    const LinePolar l2 = s.landmark(e.landmark2_id);
    const double r = landmark_landmark_error(l1.theta, l2.theta, e.delta_theta_ideal);
    chi2 += e.weight * r * r;
  }
  return chi2;
}

namespace detail {

/// Maps state offsets to solver columns, skipping gauge-fixed blocks.
struct FreeIndex {
  std::vector<int> solver_col;  // state offset -> solver column, -1 if fixed
  int free_dim = 0;

  FreeIndex(const StateVector& s, const std::vector<NodeId>& fixed_poses)
      : solver_col(static_cast<size_t>(s.dim()), 0) {
    std::vector<bool> fixed(static_cast<size_t>(s.dim()), false);
    for (NodeId id : fixed_poses) {
      const int o = s.pose_offset.at(id);
      fixed[o] = fixed[o + 1] = fixed[o + 2] = true;
    }
    for (int i = 0; i < s.dim(); ++i) {
      solver_col[static_cast<size_t>(i)] = fixed[static_cast<size_t>(i)] ? -1 : free_dim++;
    }
  }
};

template <int ROWS, int CA, int CB>
void accumulate_edge(const Eigen::Matrix<double, ROWS, CA>& Ja, int offset_a,
                     const Eigen::Matrix<double, ROWS, CB>& Jb, int offset_b,
                     const Eigen::Matrix<double, ROWS, ROWS>& info,
                     const Eigen::Matrix<double, ROWS, 1>& err, const FreeIndex& idx,
                     std::vector<Eigen::Triplet<double>>& trip, Eigen::VectorXd& b) {
  const auto add_block = [&](const auto& Ji, int oi, const auto& Jj, int oj) {
    const Eigen::MatrixXd block = Ji.transpose() * info * Jj;
    for (int r = 0; r < block.rows(); ++r) {
      const int cr = idx.solver_col[static_cast<size_t>(oi + r)];
      if (cr < 0) continue;
      for (int c = 0; c < block.cols(); ++c) {
        const int cc = idx.solver_col[static_cast<size_t>(oj + c)];
        if (cc < 0) continue;
        trip.emplace_back(cr, cc, block(r, c));
      }
    }
  };
  add_block(Ja, offset_a, Ja, offset_a);
  add_block(Ja, offset_a, Jb, offset_b);
  add_block(Jb, offset_b, Ja, offset_a);
  add_block(Jb, offset_b, Jb, offset_b);

  const Eigen::VectorXd ba = Ja.transpose() * info * err;
  const Eigen::VectorXd bb = Jb.transpose() * info * err;
  for (int r = 0; r < ba.size(); ++r) {
    const int cr = idx.solver_col[static_cast<size_t>(offset_a + r)];
    if (cr >= 0) b[cr] += ba[r];
  }
  for (int r = 0; r < bb.size(); ++r) {
    const int cr = idx.solver_col[static_cast<size_t>(offset_b + r)];
    if (cr >= 0) b[cr] += bb[r];
  }
}

}  // namespace detail

/// Builds H = sum J^T Omega J and b = sum J^T Omega e block-sparsely over the
/// free (non-gauge-fixed) dimensions.
inline LinearSystem linearize(const Graph& g, const StateVector& s,
                              const std::vector<NodeId>& fixed_poses = {}) {
  const detail::FreeIndex idx(s, fixed_poses);
  std::vector<Eigen::Triplet<double>> trip;
  LinearSystem sys;
  sys.b = Eigen::VectorXd::Zero(idx.free_dim);

  for (const auto& e : g.odometry_edges) {
    if (!e.active) continue;
    const Pose2 a = s.pose(e.pose_id_a), b_pose = s.pose(e.pose_id_b);
    const Eigen::Vector3d r = odometry_error(a, b_pose, e.measurement);
    const OdometryJacobians J = odometry_jacobians(a, b_pose, e.measurement);
    sys.chi2 += r.dot(e.information * r);
    detail::accumulate_edge<3, 3, 3>(J.d_a, s.pose_offset.at(e.pose_id_a), J.d_b,
                                     s.pose_offset.at(e.pose_id_b), e.information, r, idx, trip,
                                     sys.b);
  }
  for (const auto& e : g.pose_landmark_edges) {
    if (!e.active) continue;
    const Pose2 p = s.pose(e.pose_id);
    const LinePolar l = s.landmark(e.landmark_id);
    const Eigen::Vector2d r = pose_landmark_error(p, l, e.rho, e.alpha);
    const PoseLandmarkJacobians J = pose_landmark_jacobians(p, l, e.alpha);
    sys.chi2 += r.dot(e.information * r);
    detail::accumulate_edge<2, 3, 2>(J.d_pose, s.pose_offset.at(e.pose_id), J.d_landmark,
                                     s.landmark_offset.at(e.landmark_id), e.information, r, idx,
                                     trip, sys.b);
  }
  for (const auto& e : g.landmark_landmark_edges) {
    if (!e.active) continue;
    const LinePolar l1 = s.landmark(e.landmark1_id);
    const LinePolar l2 = s.landmark(e.landmark2_id);
    const double r = landmark_landmark_error(l1.theta, l2.theta, e.delta_theta_ideal);
    const LandmarkLandmarkJacobians J = landmark_landmark_jacobians();
    Eigen::Matrix<double, 1, 1> info, err;
    info(0, 0) = e.weight;
    err(0, 0) = r;
    sys.chi2 += e.weight * r * r;
    detail::accumulate_edge<1, 2, 2>(J.d_l1, s.landmark_offset.at(e.landmark1_id), J.d_l2,
                                     s.landmark_offset.at(e.landmark2_id), info, err, idx, trip,
                                     sys.b);
  }

  sys.H.resize(idx.free_dim, idx.free_dim);
  sys.H.setFromTriplets(trip.begin(), trip.end());
  return sys;
}

struct LmOptions {
  int max_iterations = 50;
  double initial_lambda = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 2.0;
  double max_lambda = 1e12;
  double chi2_relative_tolerance = 1e-6;
  double gradient_tolerance = 1e-12;
  bool fix_first_pose = true;
};

class OptimizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimizationReport {
  int iterations = 0;
  double initial_chi2 = 0.0;
  double final_chi2 = 0.0;
  int accepted_steps = 0;
  int rejected_steps = 0;
  bool converged = false;
  std::vector<std::string> lines;  // one per iteration: iteration, lambda, chi2, accepted

  std::string to_text() const {
    std::ostringstream ss;
    for (const auto& l : lines) ss << l << '\n';
    ss << "iterations=" << iterations << " initial_chi2=" << initial_chi2
       << " final_chi2=" << final_chi2 << " accepted=" << accepted_steps
       << " rejected=" << rejected_steps << " converged=" << (converged ? 1 : 0) << '\n';
    return ss.str();
  }
};

/// Levenberg-Marquardt over the graph. The first pose is gauge-fixed by
/// default. Damping uses the Marquardt form lambda * diag(H) (unit floor on
/// empty diagonal entries so evidence-free blocks stay put).
inline OptimizationReport lm_optimize(Graph& g, const LmOptions& opts = {}) {
  StateVector state = StateVector::from_graph(g);
  std::vector<NodeId> fixed;
  if (opts.fix_first_pose && !g.poses.empty()) fixed.push_back(g.poses.front().id);

  OptimizationReport report;
  double lambda = opts.initial_lambda;
  LinearSystem sys = linearize(g, state, fixed);
  double chi2 = sys.chi2;
  report.initial_chi2 = chi2;

  auto log_line = [&](int iter, bool accepted, double c) {
    std::ostringstream ss;
    ss << "iter=" << iter << " lambda=" << lambda << " chi2=" << c
       << " accepted=" << (accepted ? 1 : 0);
    report.lines.push_back(ss.str());
  };

  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    report.iterations = iter;
    if (sys.b.size() == 0 || sys.b.lpNorm<Eigen::Infinity>() < opts.gradient_tolerance) {
      log_line(iter, true, chi2);
      report.converged = true;
      break;
    }

    // Marquardt damping on the diagonal
    Eigen::SparseMatrix<double> Hd = sys.H;
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(sys.b.size());
    for (int k = 0; k < sys.H.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(sys.H, k); it; ++it) {
        if (it.row() == it.col()) diag[it.row()] = it.value();
      }
    }
    for (int i = 0; i < diag.size(); ++i) {
      Hd.coeffRef(i, i) += lambda * (diag[i] > 0.0 ? diag[i] : 1.0);
    }

    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> chol(Hd);
    if (chol.info() != Eigen::Success) {
      lambda *= opts.lambda_up;
      ++report.rejected_steps;
      log_line(iter, false, chi2);
      if (lambda > opts.max_lambda) {
        throw OptimizationError("lm_optimize: Cholesky factorization failed at iteration " +
                                std::to_string(iter));
      }
      continue;
    }
    const Eigen::VectorXd dx = chol.solve(-sys.b);
    if (!dx.allFinite()) {
      lambda *= opts.lambda_up;
      ++report.rejected_steps;
      log_line(iter, false, chi2);
      if (lambda > opts.max_lambda) {
        throw OptimizationError("lm_optimize: singular system at iteration " +
                                std::to_string(iter));
      }
      continue;
    }

    StateVector candidate = state;
    const detail::FreeIndex idx(state, fixed);
    for (int i = 0; i < state.dim(); ++i) {
      const int c = idx.solver_col[static_cast<size_t>(i)];
      if (c >= 0) candidate.x[i] += dx[c];
    }
    const double new_chi2 = total_objective(g, candidate);

    if (new_chi2 <= chi2) {
      const double decrease = chi2 - new_chi2;
      state = candidate;
      state.normalize();
      lambda = std::max(lambda / opts.lambda_down, 1e-12);
      ++report.accepted_steps;
      log_line(iter, true, new_chi2);
      const bool tiny = decrease <= opts.chi2_relative_tolerance * std::max(chi2, 1e-30);
      chi2 = new_chi2;
      if (tiny) {
        report.converged = true;
        break;
      }
      sys = linearize(g, state, fixed);
      chi2 = sys.chi2;
    } else {
      lambda *= opts.lambda_up;
      ++report.rejected_steps;
      log_line(iter, false, chi2);
      if (lambda > opts.max_lambda) {
        report.converged = false;
        break;
      }
    }
  }

  state.write_to(g);
  report.final_chi2 = chi2;
  return report;
}

/// The chi-square quantile used by consistency pruning.
inline double chi_squared_quantile(int dof, double q) {
  boost::math::chi_squared dist(static_cast<double>(dof));
  return boost::math::quantile(dist, q);
}

struct PruneOptions {
  double quantile = 0.95;
  bool prune_pose_landmark = false;  // LL edges are always eligible
};

/// Deactivates edges whose weighted squared residual strictly exceeds the
/// chi-square quantile for their dimension. Deactivated edges are retained.
inline int consistency_prune(Graph& g, const PruneOptions& opts = {}) {
  const StateVector s = StateVector::from_graph(g);
  int pruned = 0;
  const double q1 = chi_squared_quantile(1, opts.quantile);
  for (auto& e : g.landmark_landmark_edges) {
    if (!e.active) continue;
    const double r = landmark_landmark_error(s.landmark(e.landmark1_id).theta,
                                             s.landmark(e.landmark2_id).theta,
                                             e.delta_theta_ideal);
    if (e.weight * r * r > q1) {
      e.active = false;
      ++pruned;
    }
  }
  if (opts.prune_pose_landmark) {
    const double q2 = chi_squared_quantile(2, opts.quantile);
    for (auto& e : g.pose_landmark_edges) {
      if (!e.active) continue;
      const Eigen::Vector2d r =
          pose_landmark_error(s.pose(e.pose_id), s.landmark(e.landmark_id), e.rho, e.alpha);
      if (r.dot(e.information * r) > q2) {
        e.active = false;
        ++pruned;
      }
    }
  }
  return pruned;
}

}  // namespace somaslam
