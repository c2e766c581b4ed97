#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "somaslam/pipeline.hpp"
#include "somaslam/synth.hpp"

namespace {

int cmd_run(const std::string& config_path, int beams_override, bool no_soft_mw,
            std::uint64_t seed_override, bool seed_set, const std::string& out_override,
            const std::string& dataset_override) {
  somaslam::RunConfig cfg = somaslam::load_config(config_path);
  if (beams_override > 0) cfg.beams = beams_override;
  if (no_soft_mw) cfg.soft_mw_enabled = false;
  if (seed_set) cfg.seed = seed_override;
  if (!out_override.empty()) cfg.output_dir = out_override;
  if (!dataset_override.empty()) cfg.dataset_path = dataset_override;

  const auto result = somaslam::run_and_write_artifacts(cfg);
  std::cout << "poses=" << result.graphs.landmark_graph.poses.size()
            << " landmarks=" << result.graphs.landmark_graph.landmarks.size()
            << " ll_edges=" << result.ll_edge_count()
            << " loop_edges=" << result.loop_edge_count() << '\n';
  if (result.errors) {
    std::cout << result.errors->to_text();
    std::cout << result.errors->to_record() << '\n';
  }
  std::cout << "artifacts written to " << cfg.output_dir << '\n';
  return 0;
}

int cmd_synth(const std::string& config_path, std::uint64_t seed_override, bool seed_set,
              const std::string& out_override) {
  somaslam::RunConfig cfg = somaslam::load_config(config_path);
  if (seed_set) cfg.seed = seed_override;
  if (!out_override.empty()) cfg.output_dir = out_override;
  cfg.validate();

  const auto result = somaslam::synthesize(cfg.synth, cfg.seed);
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const fs::path out(cfg.output_dir);
  somaslam::write_carmen_log(result.log, (out / "synth.clf").string());
  somaslam::write_relations(result.relations, (out / "synth.relations").string());
  std::cout << "wrote " << (out / "synth.clf").string() << " (" << result.log.scans.size()
            << " scans) and " << (out / "synth.relations").string() << " ("
            << result.relations.size() << " relations)\n";
  return 0;
}

int cmd_eval(const std::string& trajectory_path, const std::string& relations_path,
             double tolerance) {
  const auto estimate = somaslam::parse_trajectory(trajectory_path);
  const auto relations = somaslam::parse_relations(relations_path);
  const auto summary = somaslam::relation_errors(estimate, relations, tolerance);
  std::cout << summary.to_text();
  std::cout << summary.to_record() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SoMaSLAM: 2D graph SLAM for sparse range sensing with soft Manhattan-world constraints"};
  app.require_subcommand(1);

  std::string config_path, out_dir, dataset_path;
  int beams = 0;
  bool no_soft_mw = false;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "run the SLAM pipeline on a dataset");
  run->add_option("--config", config_path, "config file");
  run->add_option("--dataset", dataset_path, "dataset path (overrides config)");
  run->add_option("--beams", beams, "subsampled beam count (overrides config)");
  run->add_flag("--no-soft-mw", no_soft_mw, "disable soft Manhattan-world constraints");
  auto* run_seed = run->add_option("--seed", seed, "random seed (overrides config)");
  run->add_option("--out", out_dir, "output directory (overrides config)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", config_path, "config file");
  auto* synth_seed = synth->add_option("--seed", seed, "random seed (overrides config)");
  synth->add_option("--out", out_dir, "output directory (overrides config)");

  std::string trajectory_path, relations_path;
  double tolerance = 0.1;
  auto* eval = app.add_subcommand("eval", "evaluate a trajectory against ground-truth relations");
  eval->add_option("--trajectory", trajectory_path, "trajectory file")->required();
  eval->add_option("--relations", relations_path, "relations file")->required();
  eval->add_option("--tolerance", tolerance, "timestamp matching tolerance (s)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return cmd_run(config_path, beams, no_soft_mw, seed, run_seed->count() > 0, out_dir,
                     dataset_path);
    }
    if (synth->parsed()) {
      return cmd_synth(config_path, seed, synth_seed->count() > 0, out_dir);
    }
    if (eval->parsed()) {
      return cmd_eval(trajectory_path, relations_path, tolerance);
    }
  } catch (const somaslam::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const somaslam::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 1;
  } catch (const somaslam::OptimizationError& e) {
    std::cerr << "optimizer error: " << e.what() << '\n';
    return 1;
  } catch (const somaslam::EvaluationError& e) {
    std::cerr << "evaluation error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
