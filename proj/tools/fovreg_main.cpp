#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "fovreg/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"FoV-overlap similarity regression: synthetic worlds, descriptor training, "
               "retrieval evaluation"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_dir, poses_path, gt_path, checkpoint_path, run_dir;
  std::string loss;
  std::int64_t step_period = 0;
  double dist_m = 25.0;
  double angle_deg = 40.0;
  bool force = false;
  bool whiten = false;
  int pca_dim = 0;
  int k = 10;
  std::string eval_config, curve_config;

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset: poses.csv, "
                                                "observations.fovr, pairs.jsonl");
  synth->add_option("--config", config_path, "Experiment config JSON (world + pairs sections)")
      ->required();
  synth->add_option("--out", out_path, "Output directory")->required();
  synth->add_flag("--force", force, "Overwrite existing outputs");

  CLI::App* gt = app.add_subcommand("gt", "Derive the binary ground-truth relation from poses");
  gt->add_option("--poses", poses_path, "poses.csv path")->required();
  gt->add_option("--out", out_path, "Output ground-truth JSON path")->required();
  gt->add_option("--dist-m", dist_m, "Positive distance threshold in meters")
      ->capture_default_str();
  gt->add_option("--angle-deg", angle_deg, "Positive heading threshold in degrees")
      ->capture_default_str();
  gt->add_flag("--force", force, "Overwrite existing outputs");

  CLI::App* train = app.add_subcommand("train", "Train an encoder; writes checkpoints, "
                                                "loss_log.csv, run.json");
  train->add_option("--config", config_path, "Experiment config JSON (train section)")
      ->required();
  train->add_option("--data", data_dir,
                    "Dataset directory (poses.csv, observations.fovr, pairs.jsonl)")
      ->required();
  train->add_option("--out", out_path, "Run output directory")->required();
  train->add_option("--loss", loss, "Objective override: mse, cl, or gcl")
      ->check(CLI::IsMember({"mse", "cl", "gcl"}));
  train->add_option("--step-period", step_period, "Step-schedule period override (iterations)");
  train->add_flag("--force", force, "Overwrite existing outputs");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint; writes report.json");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint JSON path")->required();
  eval->add_option("--data", data_dir, "Dataset directory (poses.csv, observations.fovr)")
      ->required();
  eval->add_option("--gt", gt_path, "Ground-truth JSON path")->required();
  eval->add_option("--out", out_path, "Output report.json path")->required();
  eval->add_flag("--whiten", whiten, "Fit PCA whitening on map descriptors and apply it");
  eval->add_option("--pca-dim", pca_dim, "Reduced dimension for whitening (requires --whiten)");
  eval->add_option("--k", k, "Retrieval depth")->capture_default_str();
  eval->add_option("--config", eval_config, "Optional experiment config (eval section)");
  eval->add_flag("--force", force, "Overwrite existing outputs");

  CLI::App* curve = app.add_subcommand("curve", "Evaluate every snapshot of a run; writes "
                                                "curve.csv");
  curve->add_option("--run", run_dir, "Run directory from the train command")->required();
  curve->add_option("--data", data_dir, "Dataset directory (poses.csv, observations.fovr)")
      ->required();
  curve->add_option("--gt", gt_path, "Ground-truth JSON path")->required();
  curve->add_option("--out", out_path, "Output curve.csv path")->required();
  curve->add_option("--config", curve_config, "Optional experiment config (eval section)");
  curve->add_flag("--force", force, "Overwrite existing outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      fovreg::cmd_synth(config_path, out_path, force);
    } else if (gt->parsed()) {
      fovreg::cmd_gt(poses_path, dist_m, angle_deg, out_path, force);
    } else if (train->parsed()) {
      std::optional<std::string> loss_override;
      if (!loss.empty()) loss_override = loss;
      std::optional<std::int64_t> period_override;
      if (train->count("--step-period") > 0) period_override = step_period;
      fovreg::cmd_train(config_path, data_dir, out_path, force, loss_override, period_override);
    } else if (eval->parsed()) {
      std::optional<std::string> cfg;
      if (!eval_config.empty()) cfg = eval_config;
      fovreg::cmd_eval(checkpoint_path, data_dir, gt_path, out_path, force, whiten, pca_dim, k,
                       cfg);
    } else if (curve->parsed()) {
      std::optional<std::string> cfg;
      if (!curve_config.empty()) cfg = curve_config;
      fovreg::cmd_curve(run_dir, data_dir, gt_path, out_path, force, cfg);
    }
  } catch (const fovreg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fovreg::RunError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
