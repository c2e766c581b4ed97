#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <random>

#include "somaslam/loopclosure.hpp"

using namespace somaslam;
using Catch::Approx;

namespace {

Multiscan wall_points(const std::vector<std::pair<Vec2, Vec2>>& walls, double spacing) {
  Multiscan ms;
  ms.anchor_pose_id = 0;
  for (const auto& [a, b] : walls) {
    const double len = (b - a).norm();
    const int n = std::max(2, static_cast<int>(len / spacing));
    for (int i = 0; i <= n; ++i) {
      ms.points.push_back(a + (static_cast<double>(i) / n) * (b - a));
    }
  }
  return ms;
}

/// scan synthesized from the grid itself: march each ray to the first
/// occupied cell
SparseScan scan_from_grid(const OccupancyGrid& grid, const Pose2& pose, int n_beams,
                          double max_range) {
  SparseScan s;
  const double step = grid.resolution * 0.25;
  for (int b = 0; b < n_beams; ++b) {
    const double bearing = -kPi + 2.0 * kPi * b / n_beams;
    Beam beam;
    beam.bearing = bearing;
    beam.valid = false;
    const double angle = pose.theta + bearing;
    const Vec2 dir(std::cos(angle), std::sin(angle));
    for (double r = step; r <= max_range; r += step) {
      if (grid.probability_at_world(pose.translation() + r * dir) > 0.5) {
        beam.range = r;
        beam.valid = true;
        break;
      }
    }
    s.beams.push_back(beam);
  }
  return s;
}

/// independent exhaustive reference matcher with the same tie-break chain
LoopCandidate exhaustive_match(const SparseScan& scan, const OccupancyGrid& grid,
                               const Pose2& prior, const SearchWindow& w) {
  std::vector<Vec2> local;
  for (const Beam& b : scan.beams) {
    if (b.valid) local.emplace_back(b.range * std::cos(b.bearing), b.range * std::sin(b.bearing));
  }
  const int nt = static_cast<int>(std::floor(w.trans_extent / w.trans_step + 1e-9));
  const int nr = static_cast<int>(std::floor(w.rot_extent / w.rot_step + 1e-9));
  double best_score = -1.0, best_d2 = 1e18;
  int best_r = 1 << 30, best_x = 1 << 30, best_y = 1 << 30;
  Pose2 best_pose = prior;
  for (int ri = 0; ri <= 2 * nr; ++ri) {
    const double theta = prior.theta + (ri - nr) * w.rot_step;
    const double c = std::cos(theta), s = std::sin(theta);
    for (int xi = 0; xi <= 2 * nt; ++xi) {
      for (int yi = 0; yi <= 2 * nt; ++yi) {
        const Vec2 off((xi - nt) * w.trans_step, (yi - nt) * w.trans_step);
        double score = 0.0;
        for (const Vec2& p : local) {
          const Vec2 e(prior.x + c * p.x() - s * p.y() + off.x(),
                       prior.y + s * p.x() + c * p.y() + off.y());
          score += grid.probability_at_world(e);
        }
        score /= static_cast<double>(local.size());
        const double rot_off = (ri - nr) * w.rot_step;
        const double d2 = off.x() * off.x() + off.y() * off.y() + rot_off * rot_off;
        const bool better =
            score > best_score ||
            (score == best_score &&
             (d2 < best_d2 ||
              (d2 == best_d2 &&
               (ri < best_r || (ri == best_r && (xi < best_x || (xi == best_x && yi < best_y)))))));
        if (better) {
          best_score = score;
          best_d2 = d2;
          best_r = ri;
          best_x = xi;
          best_y = yi;
          best_pose = Pose2(prior.x + off.x(), prior.y + off.y(), theta);
        }
      }
    }
  }
  LoopCandidate out;
  out.relative_pose = best_pose;
  out.score = best_score;
  return out;
}

}  // namespace

TEST_CASE("landmark graph provides odometry edges to the pose graph") {
  Graph lg;
  lg.add_pose(Pose2(0, 0, 0));
  lg.add_pose(Pose2(0, 0, 0));
  lg.add_pose(Pose2(1, 0, 0));
  lg.add_pose(Pose2(1, 1, kPi / 2.0));
  lg.add_pose(Pose2(1, 2, kPi / 2.0));
  const auto edges = landmark_graph_to_pose_edges(lg, Eigen::Matrix3d::Identity());
  REQUIRE(edges.size() == 4);
  CHECK(edges[0].measurement.x == Approx(0.0).margin(1e-12));
  CHECK(edges[0].measurement.theta == Approx(0.0).margin(1e-12));
  CHECK(edges[1].measurement.x == Approx(1.0));
  CHECK(edges[3].measurement.x == Approx(1.0));
  CHECK(edges[3].measurement.y == Approx(0.0).margin(1e-12));
  CHECK(edges[3].measurement.theta == Approx(0.0).margin(1e-12));
}

TEST_CASE("render_grid") {
  GridParams params;
  params.resolution = 0.1;
  SECTION("no scans yields an empty grid") {
    const OccupancyGrid g = render_grid({}, {}, params);
    CHECK(g.empty());
    CHECK(g.probability_at_world(Vec2(0, 0)) == 0.0);
  }
  SECTION("a single point raises its cell by the hit increment") {
    Multiscan ms;
    ms.anchor_pose_id = 0;
    ms.points.emplace_back(1.0, 0.0);
    const OccupancyGrid g = render_grid({ms}, {Pose2(0, 0, 0)}, params);
    const auto [ox, oy] = g.cell_of(Vec2(0, 0));
    const auto [cx, cy] = g.cell_of(Vec2(1.0, 0.0));
    CHECK(cx - ox == 10);  // floor(coordinate / resolution) indexing
    CHECK(cy == oy);
    CHECK(g.log_odds_at(cx, cy) == Approx(params.hit_log_odds));
    // cells along the ray before the hit carry the miss decrement
    const auto [mx, my] = g.cell_of(Vec2(0.5, 0.0));
    CHECK(g.log_odds_at(mx, my) == Approx(params.miss_log_odds));
  }
  SECTION("the same point twice doubles the log odds") {
    Multiscan ms;
    ms.anchor_pose_id = 0;
    ms.points.emplace_back(1.0, 0.0);
    ms.points.emplace_back(1.0, 0.0);
    const OccupancyGrid g = render_grid({ms}, {Pose2(0, 0, 0)}, params);
    const auto [cx, cy] = g.cell_of(Vec2(1.0, 0.0));
    CHECK(g.log_odds_at(cx, cy) == Approx(2.0 * params.hit_log_odds));
  }
  SECTION("log odds are clamped") {
    Multiscan ms;
    ms.anchor_pose_id = 0;
    for (int i = 0; i < 100; ++i) ms.points.emplace_back(1.0, 0.0);
    GridParams p = params;
    p.clamp = 5.0;
    const OccupancyGrid g = render_grid({ms}, {Pose2(0, 0, 0)}, p);
    const auto [cx, cy] = g.cell_of(Vec2(1.0, 0.0));
    CHECK(g.log_odds_at(cx, cy) == Approx(5.0));
  }
}

TEST_CASE("write_pgm produces a grid dump with companion metadata") {
  Multiscan ms;
  ms.anchor_pose_id = 0;
  ms.points.emplace_back(0.5, 0.0);
  const OccupancyGrid g = render_grid({ms}, {Pose2(0, 0, 0)}, {});
  const auto path = (std::filesystem::temp_directory_path() / "grid_test.pgm").string();
  write_pgm(g, path);
  std::ifstream in(path);
  std::string magic;
  in >> magic;
  CHECK(magic == "P2");
  std::ifstream meta(path + ".txt");
  std::string key;
  meta >> key;
  CHECK(key == "origin_x");
}

TEST_CASE("correlative_match basics") {
  SECTION("empty grid scores zero and returns the prior") {
    SparseScan scan;
    scan.beams.push_back({0.0, 1.0, true});
    OccupancyGrid empty;
    SearchWindow w;
    w.trans_extent = 0.2;
    w.trans_step = 0.1;
    w.rot_extent = 0.04;
    w.rot_step = 0.02;
    const LoopCandidate c = correlative_match(scan, empty, Pose2(1, 2, 0.3), w);
    CHECK(c.score == 0.0);
    CHECK(c.relative_pose.x == Approx(1.0));
    CHECK(c.relative_pose.y == Approx(2.0));
    CHECK(c.relative_pose.theta == Approx(0.3));
  }
  SECTION("uniform grid ties resolve to the prior") {
    OccupancyGrid g;
    g.resolution = 0.1;
    g.origin = Vec2(-5, -5);
    g.width = g.height = 100;
    g.log_odds.assign(100 * 100, 0.7);
    SparseScan scan;
    scan.beams.push_back({0.0, 1.0, true});
    scan.beams.push_back({kPi / 2.0, 1.0, true});
    SearchWindow w;
    w.trans_extent = 0.3;
    w.trans_step = 0.1;
    w.rot_extent = 0.1;
    w.rot_step = 0.05;
    const LoopCandidate c = correlative_match(scan, g, Pose2(0, 0, 0), w);
    CHECK(c.relative_pose.x == Approx(0.0).margin(1e-12));
    CHECK(c.relative_pose.y == Approx(0.0).margin(1e-12));
    CHECK(c.relative_pose.theta == Approx(0.0).margin(1e-12));
  }
  SECTION("invalid windows and empty scans throw") {
    SparseScan scan;
    scan.beams.push_back({0.0, 1.0, false});
    OccupancyGrid g;
    SearchWindow w;
    CHECK_THROWS_AS(correlative_match(scan, g, Pose2(), w), std::invalid_argument);
    scan.beams[0].valid = true;
    w.trans_step = -1.0;
    CHECK_THROWS_AS(correlative_match(scan, g, Pose2(), w), std::invalid_argument);
  }
}

TEST_CASE("self-consistent scans match within one step") {
  // room centered at the origin; the rasterizing rays leave from the center
  const std::vector<std::pair<Vec2, Vec2>> walls = {
      {{-4, -3}, {4, -3}}, {{4, -3}, {4, 3}}, {{4, 3}, {-4, 3}}, {{-4, 3}, {-4, -3}}};
  GridParams gp;
  const OccupancyGrid grid = render_grid({wall_points(walls, 0.02)}, {Pose2(0, 0, 0)}, gp);

  SearchWindow w;
  w.trans_extent = 0.5;
  w.trans_step = 0.05;
  w.rot_extent = 0.2;
  w.rot_step = 0.02;

  std::mt19937 rng(55);
  std::uniform_real_distribution<double> ux(-3.0, 3.0), uy(-2.0, 2.0), ut(-kPi, kPi);
  std::uniform_real_distribution<double> jit(-0.5, 0.5);

  SECTION("prior at the generating pose recovers it with score near 1") {
    int good = 0;
    const int trials = 60;
    for (int t = 0; t < trials; ++t) {
      const Pose2 truth(ux(rng), uy(rng), ut(rng));
      const SparseScan scan = scan_from_grid(grid, truth, 24, 12.0);
      const LoopCandidate c = correlative_match(scan, grid, truth, w);
      const double dx = std::abs(c.relative_pose.x - truth.x);
      const double dy = std::abs(c.relative_pose.y - truth.y);
      const double dt = std::abs(wrap_angle(c.relative_pose.theta - truth.theta));
      if (dx <= w.trans_step + 1e-9 && dy <= w.trans_step + 1e-9 && dt <= w.rot_step + 1e-9) {
        ++good;
        CHECK(c.score > 0.8);
      }
    }
    CHECK(good >= trials * 95 / 100);
  }
  SECTION("a perturbed prior still recovers the pose to lattice precision") {
    int good = 0;
    const int trials = 60;
    for (int t = 0; t < trials; ++t) {
      const Pose2 truth(ux(rng), uy(rng), ut(rng));
      const SparseScan scan = scan_from_grid(grid, truth, 24, 12.0);
      const Pose2 prior(truth.x + 0.4 * w.trans_extent * jit(rng),
                        truth.y + 0.4 * w.trans_extent * jit(rng),
                        truth.theta + 0.4 * w.rot_extent * jit(rng));
      const LoopCandidate c = correlative_match(scan, grid, prior, w);
      const double dx = std::abs(c.relative_pose.x - truth.x);
      const double dy = std::abs(c.relative_pose.y - truth.y);
      const double dt = std::abs(wrap_angle(c.relative_pose.theta - truth.theta));
      // the search lattice is offset from the truth by the perturbation, so
      // allow the extra half-step quantization
      if (dx <= 1.5 * w.trans_step && dy <= 1.5 * w.trans_step && dt <= 1.5 * w.rot_step) {
        ++good;
      }
    }
    CHECK(good >= trials * 90 / 100);
  }
}

TEST_CASE("match never leaves the search window") {
  std::mt19937 rng(66);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::uniform_real_distribution<double> lo(-2.0, 2.0);
  for (int t = 0; t < 20; ++t) {
    OccupancyGrid g;
    g.resolution = 0.1;
    g.origin = Vec2(-4, -4);
    g.width = g.height = 80;
    g.log_odds.resize(80 * 80);
    for (auto& v : g.log_odds) v = lo(rng);
    SparseScan scan;
    for (int b = 0; b < 6; ++b) scan.beams.push_back({-kPi + b * kPi / 3.0, 1.0 + 0.2 * b, true});
    SearchWindow w;
    w.trans_extent = 0.4;
    w.trans_step = 0.1;
    w.rot_extent = 0.1;
    w.rot_step = 0.05;
    const Pose2 prior(u(rng), u(rng), u(rng));
    const LoopCandidate c = correlative_match(scan, g, prior, w);
    CHECK(std::abs(c.relative_pose.x - prior.x) <= w.trans_extent + 1e-9);
    CHECK(std::abs(c.relative_pose.y - prior.y) <= w.trans_extent + 1e-9);
    CHECK(std::abs(wrap_angle(c.relative_pose.theta - prior.theta)) <= w.rot_extent + 1e-9);
  }
}

TEST_CASE("coarse-to-fine search equals the exhaustive argmax") {
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> lo(-3.0, 3.0);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int t = 0; t < 15; ++t) {
    OccupancyGrid g;
    g.resolution = 0.05;
    g.origin = Vec2(-3, -3);
    g.width = g.height = 120;
    g.log_odds.resize(120 * 120);
    for (auto& v : g.log_odds) v = lo(rng);

    SparseScan scan;
    for (int b = 0; b < 8; ++b) scan.beams.push_back({-kPi + b * kPi / 4.0, 0.8 + 0.15 * b, true});
    SearchWindow w;
    w.trans_extent = 0.5;
    w.trans_step = 0.05;
    w.rot_extent = 0.06;
    w.rot_step = 0.02;
    const Pose2 prior(u(rng), u(rng), u(rng));

    const LoopCandidate fast = correlative_match(scan, g, prior, w);
    const LoopCandidate slow = exhaustive_match(scan, g, prior, w);
    CHECK(fast.score == slow.score);
    CHECK(fast.relative_pose.x == slow.relative_pose.x);
    CHECK(fast.relative_pose.y == slow.relative_pose.y);
    CHECK(fast.relative_pose.theta == slow.relative_pose.theta);
  }
}

TEST_CASE("detect_and_close_loops") {
  const std::vector<std::pair<Vec2, Vec2>> walls = {
      {{-6, -4}, {6, -4}}, {{6, -4}, {6, 4}}, {{6, 4}, {-6, 4}}, {{-6, 4}, {-6, -4}}};
  GridParams gp;

  // square loop: true poses around the room interior, ~0.4 m steps
  std::vector<Pose2> truth;
  const std::vector<Vec2> corners = {{-4, -2}, {4, -2}, {4, 2}, {-4, 2}};
  for (size_t leg = 0; leg < 5; ++leg) {  // 1.25 laps so the start is revisited
    const Vec2 a = corners[leg % 4], b = corners[(leg + 1) % 4];
    const int n = static_cast<int>((b - a).norm() / 0.4);
    const double heading = std::atan2((b - a).y(), (b - a).x());
    for (int i = 0; i < n; ++i) {
      const Vec2 p = a + (static_cast<double>(i) / n) * (b - a);
      truth.emplace_back(p.x(), p.y(), heading);
    }
  }

  auto make_scan = [&](const Pose2& pose) {
    SparseScan s;
    for (int b = 0; b < 16; ++b) {
      const double bearing = -kPi + 2.0 * kPi * b / 16.0;
      const double angle = pose.theta + bearing;
      const Vec2 dir(std::cos(angle), std::sin(angle));
      double best = 1e9;
      for (const auto& [wa, wb] : walls) {
        const Vec2 sgm = wb - wa;
        const double denom = dir.x() * sgm.y() - dir.y() * sgm.x();
        if (std::abs(denom) < 1e-12) continue;
        const Vec2 d = wa - pose.translation();
        const double tt = (d.x() * sgm.y() - d.y() * sgm.x()) / denom;
        const double uu = (d.x() * dir.y() - d.y() * dir.x()) / denom;
        if (tt > 1e-9 && uu >= 0.0 && uu <= 1.0) best = std::min(best, tt);
      }
      s.beams.push_back({bearing, best, best < 100.0});
    }
    return s;
  };

  SECTION("a trajectory that never revisits adds nothing") {
    Graph pg;
    std::vector<SparseScan> scans;
    std::vector<LocalGrid> grids;
    for (int i = 0; i < 60; ++i) {
      const Pose2 p(static_cast<double>(i) * 0.5, 0.0, 0.0);
      pg.add_pose(p);
      SparseScan s;
      s.beams.push_back({0.0, 1.0, true});
      scans.push_back(s);
    }
    LocalGrid lg;
    lg.first_pose_id = 0;
    lg.last_pose_id = 9;
    Multiscan ms;
    ms.anchor_pose_id = 0;
    ms.points.emplace_back(1.0, 1.0);
    lg.grid = render_grid({ms}, {pg.pose(0).pose}, gp);
    grids.push_back(lg);
    LoopClosureParams params;
    params.min_index_separation = 10;
    params.gating_radius = 2.0;  // poses move away fast
    const auto report = detect_and_close_loops(pg, grids, scans, params);
    CHECK(report.edges_added == 0);
  }

  SECTION("a drifting square loop closes and the gap shrinks") {
    // drifted estimates: constant heading bias accumulates
    Graph pg;
    std::vector<SparseScan> scans;
    Pose2 est = truth[0];
    pg.add_pose(est, 0.0);
    scans.push_back(make_scan(truth[0]));
    for (size_t i = 1; i < truth.size(); ++i) {
      Pose2 delta = se2_between(truth[i - 1], truth[i]);
      delta = Pose2(delta.x, delta.y, delta.theta + 0.0025);  // bias
      est = se2_compose(est, delta);
      const NodeId id = pg.add_pose(est, static_cast<double>(i));
      OdometryEdge e;
      e.pose_id_a = id - 1;
      e.pose_id_b = id;
      e.measurement = delta;
      Eigen::Matrix3d info = Eigen::Matrix3d::Zero();
      info(0, 0) = info(1, 1) = 1.0 / (0.02 * 0.02);
      info(2, 2) = 1.0 / (0.01 * 0.01);
      e.information = info;
      pg.odometry_edges.push_back(e);
      scans.push_back(make_scan(truth[i]));
    }
    const size_t n = truth.size();

    // local grid over the first 15 poses, built from true-pose multiscans
    // (early segment: negligible drift)
    std::vector<Multiscan> seg_ms;
    std::vector<Pose2> anchors;
    for (size_t i = 0; i < 15; ++i) {
      Multiscan ms;
      ms.anchor_pose_id = static_cast<NodeId>(i);
      const SparseScan& s = scans[i];
      for (const auto& b : s.beams) {
        if (!b.valid) continue;
        ms.points.emplace_back(b.range * std::cos(b.bearing), b.range * std::sin(b.bearing));
      }
      seg_ms.push_back(ms);
      anchors.push_back(truth[i]);
    }
    LocalGrid lg;
    lg.first_pose_id = 0;
    lg.last_pose_id = 14;
    lg.grid = render_grid(seg_ms, anchors, gp);

    LoopClosureParams params;
    params.min_index_separation = 40;
    params.gating_radius = 3.0;
    params.score_threshold = 0.55;
    params.query_period = 2;
    params.window.trans_extent = 1.2;
    params.window.trans_step = 0.05;
    params.window.rot_extent = 0.4;
    params.window.rot_step = 0.02;

    const Pose2 drifted_end = pg.pose(static_cast<NodeId>(n - 1)).pose;
    const double pre_gap = (drifted_end.translation() - truth[n - 1].translation()).norm();
    REQUIRE(pre_gap > 0.3);  // the bias produced real drift

    const auto report = detect_and_close_loops(pg, {lg}, scans, params);
    CHECK(report.edges_added >= 1);
    for (const auto& e : pg.odometry_edges) {
      if (e.is_loop) CHECK(e.pose_id_b - e.pose_id_a >= params.min_index_separation);
    }
    // revisited poses line up with the early map again
    const double post_gap =
        (pg.pose(static_cast<NodeId>(n - 1)).pose.translation() - truth[n - 1].translation()).norm();
    CHECK(post_gap < 2.0 * gp.resolution);
  }

  SECTION("scores below the threshold are logged, not closed") {
    Graph pg;
    std::vector<SparseScan> scans;
    for (int i = 0; i < 60; ++i) {
      pg.add_pose(Pose2(0.01 * i, 0, 0));
      SparseScan s;
      s.beams.push_back({0.0, 1.0, true});
      scans.push_back(s);
    }
    // grid with content far from the scan endpoints: score ~ 0
    Multiscan ms;
    ms.anchor_pose_id = 0;
    ms.points.emplace_back(-3.0, -3.0);
    LocalGrid lg;
    lg.first_pose_id = 0;
    lg.last_pose_id = 4;
    lg.grid = render_grid({ms}, {Pose2(0, 0, 0)}, gp);
    LoopClosureParams params;
    params.min_index_separation = 40;
    params.gating_radius = 5.0;
    params.query_period = 5;
    const auto report = detect_and_close_loops(pg, {lg}, scans, params);
    CHECK(report.edges_added == 0);
    CHECK(report.misses > 0);
    CHECK_FALSE(report.miss_log.empty());
  }
}
