#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <optional>
#include <vector>

#include "somaslam/dataset.hpp"
#include "somaslam/frontend.hpp"
#include "somaslam/graph.hpp"
#include "somaslam/optimizer.hpp"

namespace somaslam {

struct GridParams {
  double resolution = 0.05;
  double hit_log_odds = 0.9;
  double miss_log_odds = -0.4;
  double clamp = 10.0;
  int padding_cells = 2;
  // hit cells are splatted over a (2r+1)^2 neighbourhood; sparse beams leave
  // gaps between wall hits that the matcher cannot otherwise bridge
  int splat_radius = 0;
};

/// Log-odds occupancy grid. The origin is snapped to a multiple of the
/// resolution so cell indices follow floor(coordinate / resolution).
struct OccupancyGrid {
  Vec2 origin = Vec2::Zero();  // world position of the corner of cell (0, 0)
  double resolution = 0.05;
  int width = 0;
  int height = 0;
  double clamp = 10.0;
  std::vector<double> log_odds;  // row-major, y * width + x

  bool empty() const { return width == 0 || height == 0; }

  std::pair<int, int> cell_of(const Vec2& p) const {
    // the nudge keeps coordinates at exact cell boundaries in the upper cell
    // despite rounding in the division
    return {static_cast<int>(std::floor((p.x() - origin.x()) / resolution + 1e-9)),
            static_cast<int>(std::floor((p.y() - origin.y()) / resolution + 1e-9))};
  }
  bool contains(int ix, int iy) const { return ix >= 0 && ix < width && iy >= 0 && iy < height; }

  double log_odds_at(int ix, int iy) const {
    return contains(ix, iy) ? log_odds[static_cast<size_t>(iy) * width + ix] : 0.0;
  }

  void update(int ix, int iy, double delta) {
    if (!contains(ix, iy)) return;
    double& v = log_odds[static_cast<size_t>(iy) * width + ix];
    v = std::clamp(v + delta, -clamp, clamp);
  }

  /// Occupancy probability of the cell containing a world point; 0 outside
  /// the grid bounds.
  double probability_at_world(const Vec2& p) const {
    const auto [ix, iy] = cell_of(p);
    if (!contains(ix, iy)) return 0.0;
    return 1.0 / (1.0 + std::exp(-log_odds[static_cast<size_t>(iy) * width + ix]));
  }
};

/// Rasterizes multiscans placed at their anchor poses: the endpoint cell of
/// every point gets the hit increment, cells along the ray from the anchor
/// get the miss decrement.
inline OccupancyGrid render_grid(const std::vector<Multiscan>& multiscans,
                                 const std::vector<Pose2>& anchor_poses,
                                 const GridParams& params = {}) {
  OccupancyGrid grid;
  grid.resolution = params.resolution;
  grid.clamp = params.clamp;
  if (multiscans.size() != anchor_poses.size()) {
    throw std::invalid_argument("render_grid: multiscans/poses size mismatch");
  }

  std::vector<std::pair<Vec2, Vec2>> rays;  // (origin, endpoint) in world coords
  Vec2 lo(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
  Vec2 hi = -lo;
  for (size_t i = 0; i < multiscans.size(); ++i) {
    const Vec2 o = anchor_poses[i].translation();
    for (const Vec2& p : multiscans[i].points) {
      const Vec2 w = se2_transform_point(anchor_poses[i], p);
      rays.emplace_back(o, w);
      lo = lo.cwiseMin(w.cwiseMin(o));
      hi = hi.cwiseMax(w.cwiseMax(o));
    }
  }
  if (rays.empty()) return grid;

  const double res = params.resolution;
  grid.origin = Vec2(std::floor(lo.x() / res) - params.padding_cells,
                     std::floor(lo.y() / res) - params.padding_cells) *
                res;
  grid.width = static_cast<int>(std::floor((hi.x() - grid.origin.x()) / res)) + 1 + params.padding_cells;
  grid.height = static_cast<int>(std::floor((hi.y() - grid.origin.y()) / res)) + 1 + params.padding_cells;
  grid.log_odds.assign(static_cast<size_t>(grid.width) * grid.height, 0.0);

  for (const auto& [o, w] : rays) {
    const auto [x0, y0] = grid.cell_of(o);
    const auto [x1, y1] = grid.cell_of(w);
    // Bresenham from the origin cell, miss on every cell before the hit
    int x = x0, y = y0;
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (x != x1 || y != y1) {
      grid.update(x, y, params.miss_log_odds);
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y += sy;
      }
    }
    const int r = params.splat_radius;
    for (int oy2 = -r; oy2 <= r; ++oy2) {
      for (int ox2 = -r; ox2 <= r; ++ox2) {
        grid.update(x1 + ox2, y1 + oy2, params.hit_log_odds);
      }
    }
  }
  return grid;
}

/// Writes the grid as an ASCII PGM plus a companion text file carrying the
/// origin and resolution.
inline void write_pgm(const OccupancyGrid& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write pgm: " + path);
  out << "P2\n" << grid.width << ' ' << grid.height << "\n255\n";
  for (int y = grid.height - 1; y >= 0; --y) {
    for (int x = 0; x < grid.width; ++x) {
      const double p = 1.0 / (1.0 + std::exp(-grid.log_odds_at(x, y)));
      out << static_cast<int>(255.0 * (1.0 - p)) << (x + 1 == grid.width ? '\n' : ' ');
    }
  }
  std::ofstream meta(path + ".txt", std::ios::binary);
  meta << "origin_x " << grid.origin.x() << "\norigin_y " << grid.origin.y() << "\nresolution "
       << grid.resolution << "\n";
}

struct SearchWindow {
  double trans_extent = 1.0;  // +- meters around the prior
  double trans_step = 0.05;
  double rot_extent = 0.35;  // +- radians
  double rot_step = 0.01;
};

struct LoopCandidate {
  NodeId query_pose_id = -1;
  NodeId match_pose_id = -1;
  Pose2 relative_pose;  // from correlative_match: the matched pose in the grid frame
  double score = 0.0;
};

namespace detail {

struct ScoredPose {
  double score = -1.0;
  double dist2 = std::numeric_limits<double>::infinity();
  int rot_idx = std::numeric_limits<int>::max();
  int x_idx = std::numeric_limits<int>::max();
  int y_idx = std::numeric_limits<int>::max();
  Pose2 pose;

  bool beats(const ScoredPose& o) const {
    if (score != o.score) return score > o.score;
    if (dist2 != o.dist2) return dist2 < o.dist2;
    if (rot_idx != o.rot_idx) return rot_idx < o.rot_idx;
    if (x_idx != o.x_idx) return x_idx < o.x_idx;
    return y_idx < o.y_idx;
  }
};

/// Max-pooled occupancy probabilities used as an upper bound by the
/// coarse-to-fine search. pool window [0, w-1]^2 relative to each cell.
struct MaxPoolGrid {
  const OccupancyGrid* grid = nullptr;
  int window = 1;
  std::vector<double> pooled;

  MaxPoolGrid(const OccupancyGrid& g, int w) : grid(&g), window(w) {
    if (g.empty()) return;
    // pool along x, then along y
    std::vector<double> tmp(static_cast<size_t>(g.width) * g.height, 0.0);
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        double m = 0.0;
        for (int k = 0; k < window && x + k < g.width; ++k) {
          m = std::max(m, 1.0 / (1.0 + std::exp(-g.log_odds_at(x + k, y))));
        }
        tmp[static_cast<size_t>(y) * g.width + x] = m;
      }
    }
    pooled.assign(tmp.size(), 0.0);
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        double m = 0.0;
        for (int k = 0; k < window && y + k < g.height; ++k) {
          m = std::max(m, tmp[static_cast<size_t>(y + k) * g.width + x]);
        }
        pooled[static_cast<size_t>(y) * g.width + x] = m;
      }
    }
  }

  /// Upper bound on probability_at_world over the pooled span; cells outside
  /// the grid may still reach into it, so clamp indices into bounds.
  double bound_at_world(const Vec2& p) const {
    if (grid->empty()) return 0.0;
    auto [ix, iy] = grid->cell_of(p);
    const int x0 = std::clamp(ix, 0, grid->width - 1);
    const int y0 = std::clamp(iy, 0, grid->height - 1);
    if (ix > x0 || iy > y0) {
      // entirely beyond the upper bounds: the pooled window cannot reach back
      if (ix >= grid->width && iy >= grid->height) return 0.0;
    }
    if (ix + window <= 0 || iy + window <= 0) return 0.0;
    return pooled[static_cast<size_t>(y0) * grid->width + x0];
  }
};

}  // namespace detail

/// Exhaustive correlative scan-to-map matching over a discretized window
/// around the prior. The score of a candidate pose is the mean occupancy
/// probability under the valid beam endpoints. A coarse-to-fine pass prunes
/// translation blocks whose max-pooled upper bound cannot beat the running
/// best, which preserves the exhaustive argmax and its tie-breaks exactly
/// (ties: SE(2) offset distance to the prior, then rotation/x/y index).
inline LoopCandidate correlative_match(const SparseScan& scan, const OccupancyGrid& grid,
                                       const Pose2& prior, const SearchWindow& window) {
  if (window.trans_extent < 0.0 || window.rot_extent < 0.0 || window.trans_step <= 0.0 ||
      window.rot_step <= 0.0) {
    throw std::invalid_argument("correlative_match: empty or invalid search window");
  }
  std::vector<Vec2> local;
  for (const Beam& b : scan.beams) {
    if (b.valid) local.emplace_back(b.range * std::cos(b.bearing), b.range * std::sin(b.bearing));
  }
  if (local.empty()) throw std::invalid_argument("correlative_match: scan has no valid beams");

  const int n_trans = static_cast<int>(std::floor(window.trans_extent / window.trans_step + 1e-9));
  const int n_rot = static_cast<int>(std::floor(window.rot_extent / window.rot_step + 1e-9));
  const double inv_n = 1.0 / static_cast<double>(local.size());

  constexpr int kBlock = 8;  // fine translation steps per coarse block side
  const int pool_w =
      grid.empty() ? 1
                   : static_cast<int>(std::ceil((kBlock - 1) * window.trans_step / grid.resolution)) + 2;
  const detail::MaxPoolGrid pooled(grid, pool_w);

  detail::ScoredPose best;
  std::vector<Vec2> base(local.size());

  for (int ri = 0; ri <= 2 * n_rot; ++ri) {
    const double theta = prior.theta + (ri - n_rot) * window.rot_step;
    const double c = std::cos(theta), s = std::sin(theta);
    for (size_t i = 0; i < local.size(); ++i) {
      base[i] = Vec2(prior.x + c * local[i].x() - s * local[i].y(),
                     prior.y + s * local[i].x() + c * local[i].y());
    }
    for (int bx = 0; bx <= 2 * n_trans; bx += kBlock) {
      for (int by = 0; by <= 2 * n_trans; by += kBlock) {
        // upper bound over the block from the max-pooled grid
        double bound = 0.0;
        const Vec2 block_off((bx - n_trans) * window.trans_step,
                             (by - n_trans) * window.trans_step);
        for (const Vec2& e : base) bound += pooled.bound_at_world(e + block_off);
        bound *= inv_n;
        if (bound < best.score) continue;

        const int x_end = std::min(bx + kBlock, 2 * n_trans + 1);
        const int y_end = std::min(by + kBlock, 2 * n_trans + 1);
        for (int xi = bx; xi < x_end; ++xi) {
          for (int yi = by; yi < y_end; ++yi) {
            const Vec2 off((xi - n_trans) * window.trans_step,
                           (yi - n_trans) * window.trans_step);
            double score = 0.0;
            for (const Vec2& e : base) score += grid.probability_at_world(e + off);
            score *= inv_n;
            const double rot_off = (ri - n_rot) * window.rot_step;
            detail::ScoredPose cand;
            cand.score = score;
            cand.dist2 = off.squaredNorm() + rot_off * rot_off;
            cand.rot_idx = ri;
            cand.x_idx = xi;
            cand.y_idx = yi;
            cand.pose = Pose2(prior.x + off.x(), prior.y + off.y(), theta);
            if (cand.beats(best)) best = cand;
          }
        }
      }
    }
  }

  LoopCandidate out;
  out.relative_pose = best.pose;
  out.score = best.score;
  return out;
}

/// A grid built from one trajectory segment, tagged with the pose-id range
/// it covers.
struct LocalGrid {
  OccupancyGrid grid;
  NodeId first_pose_id = -1;
  NodeId last_pose_id = -1;
};

struct LoopClosureParams {
  double gating_radius = 5.0;
  NodeId min_index_separation = 50;
  double score_threshold = 0.6;
  SearchWindow window;
  NodeId query_period = 10;  // test every k-th pose
  Eigen::Matrix3d loop_information = Eigen::Matrix3d::Identity() * 100.0;
};

struct LoopClosureReport {
  int edges_added = 0;
  int candidates_tested = 0;
  int misses = 0;
  std::vector<std::string> miss_log;
};

/// Derives the pose graph's odometry constraints from consecutive optimized
/// poses of the landmark graph.
inline std::vector<OdometryEdge> landmark_graph_to_pose_edges(const Graph& landmark_graph,
                                                              const Eigen::Matrix3d& information) {
  std::vector<OdometryEdge> edges;
  for (size_t i = 0; i + 1 < landmark_graph.poses.size(); ++i) {
    OdometryEdge e;
    e.pose_id_a = landmark_graph.poses[i].id;
    e.pose_id_b = landmark_graph.poses[i + 1].id;
    e.measurement = se2_between(landmark_graph.poses[i].pose, landmark_graph.poses[i + 1].pose);
    e.information = information;
    edges.push_back(e);
  }
  return edges;
}

/// Matches query scans against earlier segments' local grids and inserts
/// loop edges for candidates at or above the score threshold; the pose graph
/// is re-optimized after insertion.
inline LoopClosureReport detect_and_close_loops(Graph& pose_graph,
                                                const std::vector<LocalGrid>& grids,
                                                const std::vector<SparseScan>& scans,
                                                const LoopClosureParams& params,
                                                const LmOptions& lm_opts = {}) {
  LoopClosureReport report;
  if (pose_graph.poses.size() != scans.size()) {
    throw std::invalid_argument("detect_and_close_loops: scans must parallel pose nodes");
  }

  std::vector<OdometryEdge> new_edges;
  for (size_t qi = 0; qi < pose_graph.poses.size(); qi += static_cast<size_t>(params.query_period)) {
    const PoseNode& query = pose_graph.poses[qi];
    bool has_valid_beam = false;
    for (const Beam& b : scans[qi].beams) has_valid_beam |= b.valid;
    if (!has_valid_beam) continue;

    for (const LocalGrid& lg : grids) {
      if (lg.grid.empty()) continue;
      if (query.id - lg.last_pose_id < params.min_index_separation) continue;
      // nearest pose of the segment gates the candidate
      NodeId match_id = -1;
      double best_d = params.gating_radius;
      for (NodeId pid = lg.first_pose_id; pid <= lg.last_pose_id; ++pid) {
        const double d = (pose_graph.pose(pid).pose.translation() - query.pose.translation()).norm();
        if (d <= best_d) {
          best_d = d;
          match_id = pid;
        }
      }
      if (match_id < 0) continue;

      ++report.candidates_tested;
      LoopCandidate cand = correlative_match(scans[qi], lg.grid, query.pose, params.window);
      cand.query_pose_id = query.id;
      cand.match_pose_id = match_id;
      if (cand.score >= params.score_threshold) {
        OdometryEdge e;
        e.pose_id_a = match_id;
        e.pose_id_b = query.id;
        e.measurement = se2_between(pose_graph.pose(match_id).pose, cand.relative_pose);
        e.information = params.loop_information;
        e.is_loop = true;
        new_edges.push_back(e);
      } else {
        ++report.misses;
        std::ostringstream ss;
        ss << "loop miss: query=" << query.id << " segment=[" << lg.first_pose_id << ','
           << lg.last_pose_id << "] score=" << cand.score << " threshold="
           << params.score_threshold;
        report.miss_log.push_back(ss.str());
      }
    }
  }

  for (const auto& e : new_edges) pose_graph.odometry_edges.push_back(e);
  report.edges_added = static_cast<int>(new_edges.size());
  if (!new_edges.empty()) {
    lm_optimize(pose_graph, lm_opts);
  }
  return report;
}

}  // namespace somaslam
