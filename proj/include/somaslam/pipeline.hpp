#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "somaslam/config.hpp"
#include "somaslam/dataset.hpp"
#include "somaslam/evaluation.hpp"
#include "somaslam/frontend.hpp"
#include "somaslam/loopclosure.hpp"
#include "somaslam/optimizer.hpp"
#include "somaslam/softmw.hpp"
#include "somaslam/version.hpp"

namespace somaslam {

struct PipelineResult {
  SlamGraphs graphs;
  std::vector<Multiscan> multiscans;
  std::vector<SparseScan> scans;
  TrajectoryEstimate trajectory;
  OptimizationReport landmark_report;
  LoopClosureReport loop_report;
  int pruned_edges = 0;
  std::optional<ErrorSummary> errors;

  int ll_edge_count() const {
    return static_cast<int>(graphs.landmark_graph.landmark_landmark_edges.size());
  }
  int loop_edge_count() const {
    int n = 0;
    for (const auto& e : graphs.pose_graph.odometry_edges) n += e.is_loop ? 1 : 0;
    return n;
  }
};

/// Runs the full pipeline over a sparse scan stream: front-end multiscan
/// accumulation, segment extraction, association, soft-MW constraint
/// creation, incremental and final landmark-graph optimization, pruning,
/// pose-graph construction and loop closing.
inline PipelineResult run_slam(const std::vector<SparseScan>& scans, const RunConfig& cfg) {
  PipelineResult result;
  result.scans = scans;
  Graph& lg = result.graphs.landmark_graph;
  PairSaturationLedger ledger;

  LmOptions incremental = cfg.lm;
  incremental.max_iterations = cfg.incremental_iterations;

  // multiscan accumulation window
  std::vector<Pose2> win_poses;
  std::vector<SparseScan> win_scans;
  std::vector<NodeId> win_ids;
  int flushes = 0;

  auto flush_window = [&]() {
    if (win_poses.empty()) return;
    Multiscan ms = accumulate_multiscan(win_poses, win_scans, win_ids);
    win_poses.clear();
    win_scans.clear();
    win_ids.clear();
    if (ms.points.size() < static_cast<size_t>(cfg.frontend.min_segment_points)) {
      result.multiscans.push_back(std::move(ms));
      return;
    }
    const auto segments = extract_segments(ms, cfg.frontend);
    const Pose2 anchor = lg.pose(ms.anchor_pose_id).pose;
    for (const auto& seg : segments) {
      const LineSegment global_seg = segment_to_global(seg, anchor);
      const auto assoc = associate_segment(global_seg, lg.landmarks, cfg.frontend);
      const auto [lm_id, edge] =
          upsert_landmark(seg, ms.anchor_pose_id, anchor, assoc, lg, cfg.frontend);
      if (cfg.soft_mw_enabled) {
        const LineLandmark l2 = lg.landmark(lm_id);
        for (const auto& l1 : lg.landmarks) {
          if (l1.id == l2.id) continue;
          if (auto ll = try_create_ll_edge(l1, l2, ledger, cfg.softmw)) {
            lg.landmark_landmark_edges.push_back(*ll);
          }
        }
      }
    }
    result.multiscans.push_back(std::move(ms));
    ++flushes;
    if (flushes % cfg.incremental_period == 0 && !lg.pose_landmark_edges.empty()) {
      lm_optimize(lg, incremental);
    }
  };

  Pose2 prev_raw;
  bool have_prev = false;
  int points_in_window = 0;
  for (const auto& scan : scans) {
    Pose2 estimate = scan.odom_pose;
    if (have_prev) {
      const Pose2 delta = se2_between(prev_raw, scan.odom_pose);
      estimate = se2_compose(lg.poses.back().pose, delta);
      const NodeId id = lg.add_pose(estimate, scan.timestamp);
      OdometryEdge e;
      e.pose_id_a = id - 1;
      e.pose_id_b = id;
      e.measurement = delta;
      e.information = cfg.odometry_information();
      lg.odometry_edges.push_back(e);
    } else {
      lg.add_pose(scan.odom_pose, scan.timestamp);
      have_prev = true;
    }
    prev_raw = scan.odom_pose;

    win_poses.push_back(lg.poses.back().pose);
    win_scans.push_back(scan);
    win_ids.push_back(lg.poses.back().id);
    for (const auto& b : scan.beams) points_in_window += b.valid ? 1 : 0;
    if (static_cast<int>(win_poses.size()) >= cfg.frontend.window ||
        points_in_window >= cfg.frontend.min_points) {
      flush_window();
      points_in_window = 0;
    }
  }
  flush_window();

  if (!lg.pose_landmark_edges.empty() || !lg.odometry_edges.empty()) {
    result.landmark_report = lm_optimize(lg, cfg.lm);
    PruneOptions prune;
    prune.quantile = cfg.prune_quantile;
    prune.prune_pose_landmark = cfg.prune_pose_landmark;
    result.pruned_edges = consistency_prune(lg, prune);
    if (result.pruned_edges > 0) {
      result.landmark_report = lm_optimize(lg, cfg.lm);
    }
  }

  // pose graph: optimized landmark-graph poses provide odometry constraints
  Graph& pg = result.graphs.pose_graph;
  for (const auto& p : lg.poses) pg.add_pose(p.pose, p.timestamp);
  for (auto& e : landmark_graph_to_pose_edges(lg, cfg.pose_edge_information())) {
    pg.odometry_edges.push_back(e);
  }

  if (cfg.loop_enabled && !pg.poses.empty()) {
    // local grids per trajectory segment, built from multiscans at their
    // optimized anchor poses
    std::vector<LocalGrid> grids;
    const NodeId seg_len = cfg.segment_length;
    for (NodeId first = 0; first < static_cast<NodeId>(pg.poses.size()); first += seg_len) {
      const NodeId last = std::min<NodeId>(first + seg_len - 1, static_cast<NodeId>(pg.poses.size()) - 1);
      std::vector<Multiscan> seg_ms;
      std::vector<Pose2> seg_anchor;
      for (const auto& ms : result.multiscans) {
        if (ms.anchor_pose_id >= first && ms.anchor_pose_id <= last) {
          seg_ms.push_back(ms);
          seg_anchor.push_back(pg.pose(ms.anchor_pose_id).pose);
        }
      }
      LocalGrid grid;
      grid.first_pose_id = first;
      grid.last_pose_id = last;
      grid.grid = render_grid(seg_ms, seg_anchor, cfg.grid);
      grids.push_back(std::move(grid));
    }

    LoopClosureParams loop = cfg.loop;
    loop.loop_information = cfg.loop_information();
    result.loop_report = detect_and_close_loops(pg, grids, scans, loop, cfg.lm);
  }

  const Graph& eval_graph = cfg.eval_graph == "landmark" ? lg : pg;
  for (const auto& p : eval_graph.poses) {
    result.trajectory.push_back({p.timestamp, p.pose});
  }
  return result;
}

/// Loads the configured dataset as a sparse scan stream.
inline std::vector<SparseScan> load_dataset(const RunConfig& cfg) {
  if (cfg.dataset_path.empty()) {
    throw ConfigError("dataset.path is not set");
  }
  if (cfg.dataset_format == "sparse_csv") {
    return parse_sparse_csv(cfg.dataset_path, cfg.laser_geometry().max_range);
  }
  const CarmenLog log = parse_carmen_log(cfg.dataset_path);
  const LaserGeometry geom = cfg.laser_geometry();
  std::vector<SparseScan> scans;
  scans.reserve(log.scans.size());
  for (const auto& raw : log.scans) {
    const int k = std::min<int>(cfg.beams, static_cast<int>(raw.ranges.size()));
    if (k < 1) continue;
    scans.push_back(subsample_beams(raw, k, geom));
  }
  return scans;
}

/// Key=value manifest: version, effective config echo, node/edge counts.
inline std::vector<std::string> build_manifest(const RunConfig& cfg, const PipelineResult& r) {
  std::vector<std::string> lines;
  lines.push_back(std::string("version=") + kVersion);
  for (const auto& l : config_echo(cfg)) lines.push_back(l);
  const Graph& lg = r.graphs.landmark_graph;
  auto add = [&](const std::string& k, auto v) {
    lines.push_back(k + "=" + std::to_string(v));
  };
  add("pose_count", lg.poses.size());
  add("landmark_count", lg.landmarks.size());
  add("pl_edge_count", lg.pose_landmark_edges.size());
  add("ll_edge_count", lg.landmark_landmark_edges.size());
  add("odom_edge_count", lg.odometry_edges.size());
  add("loop_edge_count", r.loop_edge_count());
  add("pruned_edge_count", r.pruned_edges);
  add("loop_candidates_tested", r.loop_report.candidates_tested);
  add("loop_misses", r.loop_report.misses);
  if (r.errors) {
    lines.push_back("errors " + r.errors->to_record());
  }
  return lines;
}

/// Executes run(config): dataset -> pipeline -> evaluation -> artifacts.
/// Returns the pipeline result after writing trajectory, map, report,
/// error summary and manifest into the output directory.
inline PipelineResult run_and_write_artifacts(const RunConfig& cfg) {
  cfg.validate();
  const auto scans = load_dataset(cfg);
  PipelineResult result = run_slam(scans, cfg);

  if (!cfg.relations_path.empty()) {
    const auto relations = parse_relations(cfg.relations_path);
    result.errors = relation_errors(result.trajectory, relations, cfg.timestamp_tolerance);
  }

  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const fs::path out(cfg.output_dir);

  export_trajectory(result.trajectory, (out / "trajectory.txt").string());

  RenderStyle style;
  render_map(result.graphs.landmark_graph, result.graphs.pose_graph, result.trajectory, style,
             (out / "map.svg").string());

  {
    std::ofstream rep(out / "report.txt", std::ios::binary);
    rep << result.landmark_report.to_text();
    for (const auto& l : result.loop_report.miss_log) rep << l << '\n';
  }
  {
    std::ofstream man(out / "manifest.txt", std::ios::binary);
    for (const auto& l : build_manifest(cfg, result)) man << l << '\n';
  }
  if (result.errors) {
    std::ofstream err(out / "errors.txt", std::ios::binary);
    err << result.errors->to_text();
    err << result.errors->to_record() << '\n';
  }
  if (cfg.dump_grids) {
    std::vector<Multiscan> all = result.multiscans;
    std::vector<Pose2> anchors;
    for (const auto& ms : all) anchors.push_back(result.graphs.pose_graph.pose(ms.anchor_pose_id).pose);
    write_pgm(render_grid(all, anchors, cfg.grid), (out / "map.pgm").string());
  }
  return result;
}

}  // namespace somaslam
