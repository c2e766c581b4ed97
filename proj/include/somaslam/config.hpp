#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "somaslam/frontend.hpp"
#include "somaslam/loopclosure.hpp"
#include "somaslam/optimizer.hpp"
#include "somaslam/softmw.hpp"

namespace somaslam {

struct SynthConfig {
  std::string world = "rectangle";  // rectangle | l_corridor | mixed
  double width = 20.0;
  double height = 10.0;
  double corridor_width = 2.0;    // l_corridor only
  double off_angle_deg = 10.0;    // mixed: tilt of the non-Manhattan wall
  double step_length = 0.25;
  double turn_step = 0.1;         // radians per in-place turning step
  int beams = 180;
  int laps = 1;
  double fov_deg = 180.0;
  double start_angle_deg = -90.0;
  double max_range = 10.0;
  double range_sigma = 0.0;
  double odom_sigma_xy = 0.01;
  double odom_sigma_theta = 0.005;
  double dt = 0.1;
  double margin = 1.5;            // path offset from the walls
};

struct RunConfig {
  // [run]
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  // [dataset]
  std::string dataset_path;
  std::string dataset_format = "carmen";  // carmen | sparse_csv
  std::string relations_path;
  int beams = 11;
  double max_range = 0.0;  // 0 = format default (10 m carmen, 4 m csv)
  double fov_deg = 180.0;
  double start_angle_deg = -90.0;
  bool use_laser_pose = false;

  // [frontend]
  FrontendParams frontend;
  double odom_sigma_xy = 0.02;
  double odom_sigma_theta = 0.01;

  // [softmw]
  bool soft_mw_enabled = true;
  SoftMwParams softmw;

  // [optimizer]
  LmOptions lm;
  int incremental_period = 1;      // multiscan flushes between incremental optimizations
  int incremental_iterations = 5;
  double prune_quantile = 0.95;
  bool prune_pose_landmark = false;

  // [loopclosure]
  bool loop_enabled = true;
  GridParams grid{.splat_radius = 1};
  LoopClosureParams loop;
  int segment_length = 50;  // poses per local grid
  double pose_edge_sigma_xy = 0.01;
  double pose_edge_sigma_theta = 0.005;
  double loop_sigma_xy = 0.1;
  double loop_sigma_theta = 0.05;
  bool dump_grids = false;

  // [evaluation]
  double timestamp_tolerance = 0.1;
  std::string eval_graph = "pose";  // pose | landmark

  // [synth]
  SynthConfig synth;

  LaserGeometry laser_geometry() const {
    LaserGeometry g;
    g.fov = fov_deg * kPi / 180.0;
    g.start_angle = start_angle_deg * kPi / 180.0;
    g.max_range = max_range > 0.0 ? max_range : (dataset_format == "sparse_csv" ? 4.0 : 10.0);
    g.use_laser_pose = use_laser_pose;
    return g;
  }
  Eigen::Matrix3d odometry_information() const {
    Eigen::Matrix3d info = Eigen::Matrix3d::Zero();
    info(0, 0) = info(1, 1) = 1.0 / (odom_sigma_xy * odom_sigma_xy);
    info(2, 2) = 1.0 / (odom_sigma_theta * odom_sigma_theta);
    return info;
  }
  Eigen::Matrix3d pose_edge_information() const {
    Eigen::Matrix3d info = Eigen::Matrix3d::Zero();
    info(0, 0) = info(1, 1) = 1.0 / (pose_edge_sigma_xy * pose_edge_sigma_xy);
    info(2, 2) = 1.0 / (pose_edge_sigma_theta * pose_edge_sigma_theta);
    return info;
  }
  Eigen::Matrix3d loop_information() const {
    Eigen::Matrix3d info = Eigen::Matrix3d::Zero();
    info(0, 0) = info(1, 1) = 1.0 / (loop_sigma_xy * loop_sigma_xy);
    info(2, 2) = 1.0 / (loop_sigma_theta * loop_sigma_theta);
    return info;
  }

  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

using FieldPtr = std::variant<double*, int*, bool*, std::string*, std::uint64_t*, NodeId*>;

struct ConfigSchema {
  // (section, key) -> field, iterated in declaration order for the manifest echo
  std::vector<std::tuple<std::string, std::string, FieldPtr>> fields;

  void add(const std::string& section, const std::string& key, FieldPtr p) {
    fields.emplace_back(section, key, p);
  }

  static void assign(FieldPtr p, const std::string& raw, const std::string& where) {
    auto bad = [&]() { throw ConfigError(where + ": cannot parse value '" + raw + "'"); };
    std::visit(
        [&](auto* ptr) {
          using T = std::remove_pointer_t<decltype(ptr)>;
          if constexpr (std::is_same_v<T, std::string>) {
            *ptr = raw;
          } else if constexpr (std::is_same_v<T, bool>) {
            if (raw == "true" || raw == "1") {
              *ptr = true;
            } else if (raw == "false" || raw == "0") {
              *ptr = false;
            } else {
              bad();
            }
          } else {
            std::istringstream ss(raw);
            T v{};
            ss >> v;
            if (ss.fail() || !(ss >> std::ws).eof()) bad();
            *ptr = v;
          }
        },
        p);
  }

  static std::string to_string(FieldPtr p) {
    return std::visit(
        [](auto* ptr) -> std::string {
          using T = std::remove_pointer_t<decltype(ptr)>;
          if constexpr (std::is_same_v<T, std::string>) {
            return *ptr;
          } else if constexpr (std::is_same_v<T, bool>) {
            return *ptr ? "true" : "false";
          } else if constexpr (std::is_same_v<T, double>) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.17g", *ptr);
            return buf;
          } else {
            return std::to_string(*ptr);
          }
        },
        p);
  }
};

inline ConfigSchema make_schema(RunConfig& c) {
  ConfigSchema s;
  s.add("run", "seed", &c.seed);
  s.add("run", "output_dir", &c.output_dir);

  s.add("dataset", "path", &c.dataset_path);
  s.add("dataset", "format", &c.dataset_format);
  s.add("dataset", "relations", &c.relations_path);
  s.add("dataset", "beams", &c.beams);
  s.add("dataset", "max_range", &c.max_range);
  s.add("dataset", "fov_deg", &c.fov_deg);
  s.add("dataset", "start_angle_deg", &c.start_angle_deg);
  s.add("dataset", "use_laser_pose", &c.use_laser_pose);

  s.add("frontend", "window", &c.frontend.window);
  s.add("frontend", "min_points", &c.frontend.min_points);
  s.add("frontend", "split_distance", &c.frontend.split_distance);
  s.add("frontend", "merge_angle", &c.frontend.merge_angle);
  s.add("frontend", "merge_distance", &c.frontend.merge_distance);
  s.add("frontend", "min_segment_points", &c.frontend.min_segment_points);
  s.add("frontend", "min_segment_length", &c.frontend.min_segment_length);
  s.add("frontend", "gate_theta", &c.frontend.gate_theta);
  s.add("frontend", "gate_rho", &c.frontend.gate_rho);
  s.add("frontend", "sigma_rho", &c.frontend.sigma_rho);
  s.add("frontend", "sigma_alpha", &c.frontend.sigma_alpha);
  s.add("frontend", "odom_sigma_xy", &c.odom_sigma_xy);
  s.add("frontend", "odom_sigma_theta", &c.odom_sigma_theta);

  s.add("softmw", "enabled", &c.soft_mw_enabled);
  s.add("softmw", "epsilon", &c.softmw.epsilon);
  s.add("softmw", "proximity_threshold", &c.softmw.proximity_threshold);
  s.add("softmw", "temporal_window", &c.softmw.temporal_window);
  s.add("softmw", "min_length", &c.softmw.min_length);
  s.add("softmw", "min_support", &c.softmw.min_support);
  s.add("softmw", "saturation_cap", &c.softmw.saturation_cap);

  s.add("optimizer", "max_iterations", &c.lm.max_iterations);
  s.add("optimizer", "initial_lambda", &c.lm.initial_lambda);
  s.add("optimizer", "lambda_up", &c.lm.lambda_up);
  s.add("optimizer", "lambda_down", &c.lm.lambda_down);
  s.add("optimizer", "chi2_relative_tolerance", &c.lm.chi2_relative_tolerance);
  s.add("optimizer", "incremental_period", &c.incremental_period);
  s.add("optimizer", "incremental_iterations", &c.incremental_iterations);
  s.add("optimizer", "prune_quantile", &c.prune_quantile);
  s.add("optimizer", "prune_pose_landmark", &c.prune_pose_landmark);

  s.add("loopclosure", "enabled", &c.loop_enabled);
  s.add("loopclosure", "resolution", &c.grid.resolution);
  s.add("loopclosure", "hit_log_odds", &c.grid.hit_log_odds);
  s.add("loopclosure", "miss_log_odds", &c.grid.miss_log_odds);
  s.add("loopclosure", "clamp", &c.grid.clamp);
  s.add("loopclosure", "splat_radius", &c.grid.splat_radius);
  s.add("loopclosure", "segment_length", &c.segment_length);
  s.add("loopclosure", "gating_radius", &c.loop.gating_radius);
  s.add("loopclosure", "min_index_separation", &c.loop.min_index_separation);
  s.add("loopclosure", "score_threshold", &c.loop.score_threshold);
  s.add("loopclosure", "trans_extent", &c.loop.window.trans_extent);
  s.add("loopclosure", "trans_step", &c.loop.window.trans_step);
  s.add("loopclosure", "rot_extent", &c.loop.window.rot_extent);
  s.add("loopclosure", "rot_step", &c.loop.window.rot_step);
  s.add("loopclosure", "query_period", &c.loop.query_period);
  s.add("loopclosure", "pose_edge_sigma_xy", &c.pose_edge_sigma_xy);
  s.add("loopclosure", "pose_edge_sigma_theta", &c.pose_edge_sigma_theta);
  s.add("loopclosure", "loop_sigma_xy", &c.loop_sigma_xy);
  s.add("loopclosure", "loop_sigma_theta", &c.loop_sigma_theta);
  s.add("loopclosure", "dump_grids", &c.dump_grids);

  s.add("evaluation", "timestamp_tolerance", &c.timestamp_tolerance);
  s.add("evaluation", "graph", &c.eval_graph);

  s.add("synth", "world", &c.synth.world);
  s.add("synth", "width", &c.synth.width);
  s.add("synth", "height", &c.synth.height);
  s.add("synth", "corridor_width", &c.synth.corridor_width);
  s.add("synth", "off_angle_deg", &c.synth.off_angle_deg);
  s.add("synth", "step_length", &c.synth.step_length);
  s.add("synth", "turn_step", &c.synth.turn_step);
  s.add("synth", "beams", &c.synth.beams);
  s.add("synth", "laps", &c.synth.laps);
  s.add("synth", "fov_deg", &c.synth.fov_deg);
  s.add("synth", "start_angle_deg", &c.synth.start_angle_deg);
  s.add("synth", "max_range", &c.synth.max_range);
  s.add("synth", "range_sigma", &c.synth.range_sigma);
  s.add("synth", "odom_sigma_xy", &c.synth.odom_sigma_xy);
  s.add("synth", "odom_sigma_theta", &c.synth.odom_sigma_theta);
  s.add("synth", "dt", &c.synth.dt);
  s.add("synth", "margin", &c.synth.margin);
  return s;
}

inline std::string upper(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace detail

/// Loads a sectioned key-value config file ([section] headers, key = value
/// lines, # comments). Unknown sections or keys are errors. Environment
/// variables SOMASLAM_<SECTION>_<KEY> override file values.
inline RunConfig load_config(const std::string& path, bool apply_env = true) {
  RunConfig cfg;
  auto schema = detail::make_schema(cfg);

  std::map<std::pair<std::string, std::string>, detail::FieldPtr> lookup;
  for (auto& [sec, key, ptr] : schema.fields) lookup[{sec, key}] = ptr;

  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line, section;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const std::string where = path + ":" + std::to_string(line_no);
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(where + ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      const auto it = lookup.find({section, key});
      if (it == lookup.end()) {
        throw ConfigError(where + ": unknown key '" + section + "." + key + "'");
      }
      detail::ConfigSchema::assign(it->second, value, where);
    }
  }

  if (apply_env) {
    for (auto& [sec, key, ptr] : schema.fields) {
      const std::string name = "SOMASLAM_" + detail::upper(sec) + "_" + detail::upper(key);
      if (const char* v = std::getenv(name.c_str())) {
        detail::ConfigSchema::assign(ptr, v, "env " + name);
      }
    }
  }
  return cfg;
}

/// Echoes the effective configuration as sorted section.key=value lines.
inline std::vector<std::string> config_echo(const RunConfig& cfg) {
  auto schema = detail::make_schema(const_cast<RunConfig&>(cfg));
  std::vector<std::string> lines;
  for (auto& [sec, key, ptr] : schema.fields) {
    lines.push_back("config." + sec + "." + key + "=" + detail::ConfigSchema::to_string(ptr));
  }
  return lines;
}

inline void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  require(dataset_format == "carmen" || dataset_format == "sparse_csv",
          "dataset.format must be carmen or sparse_csv");
  require(beams >= 1, "dataset.beams must be >= 1");
  require(max_range >= 0.0, "dataset.max_range must be >= 0");
  require(frontend.window >= 1, "frontend.window must be >= 1");
  require(frontend.min_points >= 1, "frontend.min_points must be >= 1");
  require(frontend.split_distance > 0.0 && frontend.merge_angle > 0.0 &&
              frontend.merge_distance > 0.0 && frontend.min_segment_length > 0.0,
          "frontend thresholds must be strictly positive");
  require(frontend.min_segment_points >= 2, "frontend.min_segment_points must be >= 2");
  require(frontend.gate_theta > 0.0 && frontend.gate_rho > 0.0,
          "frontend association gates must be strictly positive");
  require(frontend.sigma_rho > 0.0 && frontend.sigma_alpha > 0.0 && odom_sigma_xy > 0.0 &&
              odom_sigma_theta > 0.0,
          "frontend noise sigmas must be strictly positive");
  softmw.validate();
  require(lm.max_iterations >= 1, "optimizer.max_iterations must be >= 1");
  require(lm.initial_lambda > 0.0 && lm.lambda_up > 1.0 && lm.lambda_down > 1.0,
          "optimizer lambda schedule invalid");
  require(lm.chi2_relative_tolerance > 0.0, "optimizer.chi2_relative_tolerance must be > 0");
  require(incremental_period >= 1 && incremental_iterations >= 1,
          "optimizer incremental schedule invalid");
  require(prune_quantile > 0.0 && prune_quantile < 1.0,
          "optimizer.prune_quantile must be in (0, 1)");
  require(grid.resolution > 0.0, "loopclosure.resolution must be > 0");
  require(segment_length >= 1, "loopclosure.segment_length must be >= 1");
  require(loop.gating_radius > 0.0 && loop.min_index_separation >= 1 &&
              loop.score_threshold >= 0.0 && loop.score_threshold <= 1.0,
          "loopclosure gating parameters invalid");
  require(loop.window.trans_step > 0.0 && loop.window.rot_step > 0.0 &&
              loop.window.trans_extent >= 0.0 && loop.window.rot_extent >= 0.0,
          "loopclosure search window invalid");
  require(loop.query_period >= 1, "loopclosure.query_period must be >= 1");
  require(pose_edge_sigma_xy > 0.0 && pose_edge_sigma_theta > 0.0 && loop_sigma_xy > 0.0 &&
              loop_sigma_theta > 0.0,
          "loopclosure sigmas must be strictly positive");
  require(timestamp_tolerance > 0.0, "evaluation.timestamp_tolerance must be > 0");
  require(eval_graph == "pose" || eval_graph == "landmark",
          "evaluation.graph must be pose or landmark");
  require(synth.world == "rectangle" || synth.world == "l_corridor" || synth.world == "mixed",
          "synth.world must be rectangle, l_corridor or mixed");
  require(synth.width > 0.0 && synth.height > 0.0 && synth.step_length > 0.0 &&
              synth.turn_step > 0.0 && synth.beams >= 1 && synth.laps >= 1 &&
              synth.max_range > 0.0 && synth.dt > 0.0 && synth.margin > 0.0,
          "synth world parameters invalid");
  require(synth.range_sigma >= 0.0 && synth.odom_sigma_xy >= 0.0 && synth.odom_sigma_theta >= 0.0,
          "synth noise sigmas must be >= 0");
}

}  // namespace somaslam
