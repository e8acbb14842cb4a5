#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fovreg/benchmark.hpp"
#include "fovreg/dataset.hpp"
#include "fovreg/metrics.hpp"
#include "fovreg/trainer.hpp"

namespace fovreg {

/// Invalid input or configuration; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Failure while running a valid experiment; the CLI maps this to exit code 3.
struct RunError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Experiment config: JSON with sections world / pairs / train / eval

struct PairsSection {
  std::size_t n_pairs = 0;
  std::uint64_t seed = 0;
};

struct TrainSection {
  TrainConfig cfg;
  bool schedule_set = false;  // lr schedule defaults per loss unless set
};

struct ExperimentConfig {
  std::optional<SyntheticWorldConfig> world;
  std::optional<PairsSection> pairs;
  std::optional<TrainSection> train;
  std::optional<EvalConfig> eval;
};

namespace cfg_detail {

inline void check_keys(const nlohmann::json& j, const std::string& section,
                       std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("unknown field: " + (section.empty() ? it.key() : section + "." + it.key()));
  }
}

template <typename T>
T require(const nlohmann::json& j, const std::string& section, const char* key) {
  if (!j.contains(key)) throw ConfigError("missing field: " + section + "." + key);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid value for " + section + "." + key + ": " + e.what());
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& section, const char* key, T def) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid value for " + section + "." + key + ": " + e.what());
  }
}

}  // namespace cfg_detail

inline SyntheticWorldConfig parse_world_section(const nlohmann::json& j) {
  using namespace cfg_detail;
  check_keys(j, "world",
             {"n_landmarks", "landmark_feature_dim", "n_map", "n_query", "trajectory_length",
              "fov_deg", "range_m", "noise_sigma", "heading_jitter", "d_in", "seed"});
  SyntheticWorldConfig w;
  w.n_landmarks = get_or(j, "world", "n_landmarks", w.n_landmarks);
  w.landmark_feature_dim = get_or(j, "world", "landmark_feature_dim", w.landmark_feature_dim);
  w.n_map = get_or(j, "world", "n_map", w.n_map);
  w.n_query = get_or(j, "world", "n_query", w.n_query);
  w.trajectory_length = get_or(j, "world", "trajectory_length", w.trajectory_length);
  w.fov_angle = deg_to_rad(get_or(j, "world", "fov_deg", rad_to_deg(w.fov_angle)));
  w.range = get_or(j, "world", "range_m", w.range);
  w.noise_sigma = get_or(j, "world", "noise_sigma", w.noise_sigma);
  w.heading_jitter_std = get_or(j, "world", "heading_jitter", w.heading_jitter_std);
  w.d_in = get_or(j, "world", "d_in", w.d_in);
  w.seed = require<std::uint64_t>(j, "world", "seed");
  try {
    validate(w);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return w;
}

inline PairsSection parse_pairs_section(const nlohmann::json& j) {
  using namespace cfg_detail;
  check_keys(j, "pairs", {"n_pairs", "seed"});
  PairsSection p;
  p.n_pairs = require<std::size_t>(j, "pairs", "n_pairs");
  p.seed = require<std::uint64_t>(j, "pairs", "seed");
  if (p.n_pairs == 0) throw ConfigError("pairs.n_pairs must be > 0");
  return p;
}

inline TrainSection parse_train_section(const nlohmann::json& j) {
  using namespace cfg_detail;
  check_keys(j, "train",
             {"loss", "learning_rate", "lr_schedule", "step_factor", "step_period", "batch_size",
              "f_high", "f_mid", "f_zero", "total_iterations", "snapshot_period", "init_seed",
              "sampler_seed", "margin", "binarize_threshold", "encoder_dims", "activation"});
  TrainSection s;
  TrainConfig& c = s.cfg;
  try {
    c.loss = loss_from_name(get_or<std::string>(j, "train", "loss", "mse"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid value for train.loss: ") + e.what());
  }
  c.sgd.learning_rate = get_or(j, "train", "learning_rate", c.sgd.learning_rate);
  if (j.contains("lr_schedule")) {
    const auto name = require<std::string>(j, "train", "lr_schedule");
    if (name == "constant")
      c.sgd.schedule = SgdConfig::Schedule::constant;
    else if (name == "step")
      c.sgd.schedule = SgdConfig::Schedule::step;
    else
      throw ConfigError("invalid value for train.lr_schedule: " + name);
    s.schedule_set = true;
  }
  c.sgd.step_factor = get_or(j, "train", "step_factor", c.sgd.step_factor);
  c.sgd.step_period = get_or(j, "train", "step_period", c.sgd.step_period);
  c.batch.batch_size = get_or(j, "train", "batch_size", c.batch.batch_size);
  c.batch.f_high = get_or(j, "train", "f_high", c.batch.f_high);
  c.batch.f_mid = get_or(j, "train", "f_mid", c.batch.f_mid);
  c.batch.f_zero = get_or(j, "train", "f_zero", c.batch.f_zero);
  c.total_iterations = get_or(j, "train", "total_iterations", c.total_iterations);
  c.snapshot_period = get_or(j, "train", "snapshot_period", c.snapshot_period);
  c.init_seed = require<std::uint64_t>(j, "train", "init_seed");
  c.sampler_seed = require<std::uint64_t>(j, "train", "sampler_seed");
  c.margin = get_or(j, "train", "margin", c.margin);
  c.binarize_threshold = get_or(j, "train", "binarize_threshold", c.binarize_threshold);
  c.encoder_dims = get_or(j, "train", "encoder_dims", c.encoder_dims);
  try {
    c.activation = activation_from_name(get_or<std::string>(j, "train", "activation", "relu"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid value for train.activation: ") + e.what());
  }
  try {
    validate(c);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

inline EvalConfig parse_eval_section(const nlohmann::json& j) {
  using namespace cfg_detail;
  check_keys(j, "eval",
             {"search_k", "kl_bins", "kl_smoothing", "kl_max_pairs", "kl_seed", "whiten",
              "pca_dim", "pca_eps"});
  EvalConfig e;
  e.search_k = get_or(j, "eval", "search_k", e.search_k);
  e.kl_bins = get_or(j, "eval", "kl_bins", e.kl_bins);
  e.kl_smoothing = get_or(j, "eval", "kl_smoothing", e.kl_smoothing);
  e.kl_max_pairs = get_or(j, "eval", "kl_max_pairs", e.kl_max_pairs);
  e.kl_seed = require<std::uint64_t>(j, "eval", "kl_seed");
  e.whiten = get_or(j, "eval", "whiten", e.whiten);
  e.pca_dim = get_or(j, "eval", "pca_dim", e.pca_dim);
  e.pca_eps = get_or(j, "eval", "pca_eps", e.pca_eps);
  if (e.search_k < 1) throw ConfigError("eval.search_k must be >= 1");
  if (e.kl_bins < 2) throw ConfigError("eval.kl_bins must be >= 2");
  if (!(e.kl_smoothing > 0.0)) throw ConfigError("eval.kl_smoothing must be > 0");
  if (e.kl_max_pairs == 0) throw ConfigError("eval.kl_max_pairs must be > 0");
  if (e.pca_dim < 0) throw ConfigError("eval.pca_dim must be >= 0");
  if (!(e.pca_eps >= 0.0)) throw ConfigError("eval.pca_eps must be >= 0");
  return e;
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  cfg_detail::check_keys(j, "", {"world", "pairs", "train", "eval"});
  ExperimentConfig cfg;
  if (j.contains("world")) cfg.world = parse_world_section(j.at("world"));
  if (j.contains("pairs")) cfg.pairs = parse_pairs_section(j.at("pairs"));
  if (j.contains("train")) cfg.train = parse_train_section(j.at("train"));
  if (j.contains("eval")) cfg.eval = parse_eval_section(j.at("eval"));
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
  return parse_experiment_config(j);
}

// ---------------------------------------------------------------------------
// Command implementations

namespace cmd_detail {

inline void require_writable(const std::filesystem::path& p, bool force) {
  if (!force && std::filesystem::exists(p))
    throw ConfigError("refusing to overwrite " + p.string() + " (use --force)");
}

template <typename F>
auto as_config_error(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

template <typename F>
auto as_run_error(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const std::exception& e) {
    throw RunError(e.what());
  }
}

inline std::string checkpoint_filename(std::int64_t iteration) {
  std::string digits = std::to_string(iteration);
  if (digits.size() < 8) digits.insert(0, 8 - digits.size(), '0');
  return "checkpoint_" + digits + ".json";
}

inline Dataset load_dataset_dir(const std::filesystem::path& data_dir, bool with_pairs,
                                std::vector<SimilarityPair>* pairs_out) {
  return as_config_error([&] {
    Dataset ds = load_poses((data_dir / "poses.csv").string());
    load_observations(ds, (data_dir / "observations.fovr").string());
    if (with_pairs) *pairs_out = load_pairs((data_dir / "pairs.jsonl").string());
    return ds;
  });
}

inline std::vector<std::int64_t> snapshot_iterations(std::int64_t total, std::int64_t period) {
  std::vector<std::int64_t> out{0};
  for (std::int64_t it = period; it < total; it += period) out.push_back(it);
  out.push_back(total);
  return out;
}

}  // namespace cmd_detail

/// synth: generate a world, write poses.csv + observations.fovr, then build
/// pairs.jsonl from the *reloaded* poses so stored psi values match exactly
/// what a reader recomputes from poses.csv.
inline void cmd_synth(const std::string& config_path, const std::string& out_dir, bool force,
                      std::ostream& log = std::cout) {
  const ExperimentConfig cfg = load_experiment_config(config_path);
  if (!cfg.world) throw ConfigError("missing section: world");
  if (!cfg.pairs) throw ConfigError("missing section: pairs");
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  const auto poses_path = dir / "poses.csv";
  const auto obs_path = dir / "observations.fovr";
  const auto pairs_path = dir / "pairs.jsonl";
  cmd_detail::require_writable(poses_path, force);
  cmd_detail::require_writable(obs_path, force);
  cmd_detail::require_writable(pairs_path, force);

  const Dataset ds = cmd_detail::as_run_error([&] { return generate_synthetic_world(*cfg.world); });
  cmd_detail::as_run_error([&] {
    save_poses(ds, poses_path.string());
    save_observations(ds, obs_path.string());
    return 0;
  });
  const Dataset reloaded = cmd_detail::as_config_error([&] { return load_poses(poses_path.string()); });
  const std::vector<SimilarityPair> pairs = cmd_detail::as_config_error(
      [&] { return build_pairs(reloaded, cfg.pairs->n_pairs, cfg.pairs->seed); });
  cmd_detail::as_run_error([&] {
    save_pairs(pairs, pairs_path.string());
    return 0;
  });

  std::size_t zero = 0;
  std::vector<std::size_t> hist(10, 0);
  for (const auto& p : pairs) {
    if (p.psi == 0.0)
      ++zero;
    else
      ++hist[static_cast<std::size_t>(std::min(9, static_cast<int>(p.psi * 10.0)))];
  }
  log << "images: " << ds.map_indices().size() << " map, " << ds.query_indices().size()
      << " query (d_in " << ds.d_in << ")\n";
  log << "pairs: " << pairs.size() << "\n";
  log << "psi histogram:\n";
  log << "  0          : " << zero << "\n";
  for (int b = 0; b < 10; ++b)
    log << "  (" << format_double(b / 10.0) << "," << format_double((b + 1) / 10.0)
        << "]: " << hist[static_cast<std::size_t>(b)] << "\n";
}

inline void cmd_gt(const std::string& poses_path, double dist_m, double angle_deg,
                   const std::string& out_path, bool force) {
  if (!(dist_m >= 0.0) || !(angle_deg >= 0.0))
    throw ConfigError("thresholds must be non-negative");
  cmd_detail::require_writable(out_path, force);
  const Dataset ds = cmd_detail::as_config_error([&] { return load_poses(poses_path); });
  const GroundTruthRelation gt = ground_truth_from_poses(ds, dist_m, deg_to_rad(angle_deg));
  cmd_detail::as_run_error([&] {
    save_gt(gt, out_path);
    return 0;
  });
}

inline void cmd_train(const std::string& config_path, const std::string& data_dir,
                      const std::string& out_dir, bool force,
                      const std::optional<std::string>& loss_override,
                      const std::optional<std::int64_t>& step_period_override,
                      std::ostream& log = std::cout) {
  const ExperimentConfig cfg = load_experiment_config(config_path);
  if (!cfg.train) throw ConfigError("missing section: train");
  TrainSection section = *cfg.train;
  TrainConfig& tc = section.cfg;
  if (loss_override) {
    try {
      tc.loss = loss_from_name(*loss_override);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (step_period_override) {
    if (*step_period_override <= 0) throw ConfigError("train.step_period must be > 0");
    tc.sgd.step_period = *step_period_override;
  }
  if (!section.schedule_set)
    tc.sgd.schedule =
        tc.loss == LossKind::gcl ? SgdConfig::Schedule::step : SgdConfig::Schedule::constant;

  std::vector<SimilarityPair> pairs;
  const Dataset ds = cmd_detail::load_dataset_dir(data_dir, true, &pairs);

  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  const auto iterations = cmd_detail::snapshot_iterations(tc.total_iterations, tc.snapshot_period);
  cmd_detail::require_writable(dir / "run.json", force);
  cmd_detail::require_writable(dir / "loss_log.csv", force);
  for (std::int64_t it : iterations)
    cmd_detail::require_writable(dir / cmd_detail::checkpoint_filename(it), force);

  const TrainRun run = cmd_detail::as_run_error([&] { return train(ds, pairs, tc); });

  cmd_detail::as_run_error([&] {
    for (const auto& [iteration, model] : run.snapshots)
      save_checkpoint(model, iteration, (dir / cmd_detail::checkpoint_filename(iteration)).string());
    write_loss_log_csv(run.loss_log, (dir / "loss_log.csv").string());
    nlohmann::json manifest;
    manifest["loss"] = loss_name(tc.loss);
    manifest["snapshot_iterations"] = iterations;
    manifest["total_iterations"] = tc.total_iterations;
    manifest["lr_schedule"] =
        tc.sgd.schedule == SgdConfig::Schedule::constant ? "constant" : "step";
    manifest["learning_rate"] = tc.sgd.learning_rate;
    if (tc.sgd.schedule == SgdConfig::Schedule::step) {
      manifest["step_factor"] = tc.sgd.step_factor;
      manifest["step_period"] = tc.sgd.step_period;
    }
    std::ofstream out(dir / "run.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + (dir / "run.json").string());
    out << manifest.dump(2) << "\n";
    return 0;
  });

  log << "loss: " << loss_name(tc.loss) << "\n";
  log << "lr: " << format_double(tc.sgd.learning_rate) << " ("
      << (tc.sgd.schedule == SgdConfig::Schedule::constant ? "constant" : "step") << ")\n";
  log << "iterations: " << tc.total_iterations << ", snapshots: " << run.snapshots.size() << "\n";
  log << "final batch loss: " << format_double(run.loss_log.back()) << "\n";
}

inline void cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
                     const std::string& gt_path, const std::string& out_path, bool force,
                     bool whiten, int pca_dim, int k,
                     const std::optional<std::string>& config_path,
                     std::ostream& log = std::cout) {
  EvalConfig ec;
  if (config_path) {
    const ExperimentConfig cfg = load_experiment_config(*config_path);
    if (cfg.eval) ec = *cfg.eval;
  }
  if (whiten) ec.whiten = true;
  if (pca_dim > 0) {
    if (!ec.whiten) throw ConfigError("--pca-dim requires --whiten");
    ec.pca_dim = pca_dim;
  }
  if (k > 0) ec.search_k = k;
  cmd_detail::require_writable(out_path, force);
  const Checkpoint ck =
      cmd_detail::as_config_error([&] { return load_checkpoint(checkpoint_path); });
  const Dataset ds = cmd_detail::load_dataset_dir(data_dir, false, nullptr);
  const GroundTruthRelation gt = cmd_detail::as_config_error([&] { return load_gt(gt_path); });
  const EvalReport rep =
      cmd_detail::as_run_error([&] { return evaluate(ck.model, ds, gt, ec); });
  cmd_detail::as_run_error([&] {
    save_report(rep, ec, out_path);
    return 0;
  });
  log << "r_at_1: " << format_double(rep.r_at_1) << "\n";
  log << "r_at_5: " << format_double(rep.r_at_5) << "\n";
  log << "r_at_10: " << format_double(rep.r_at_10) << "\n";
  log << "mrr5: " << format_double(rep.mrr5) << "\n";
  log << "kldiv: " << format_double(rep.kldiv) << "\n";
}

inline void cmd_curve(const std::string& run_dir, const std::string& data_dir,
                      const std::string& gt_path, const std::string& out_path, bool force,
                      const std::optional<std::string>& config_path) {
  EvalConfig ec;
  if (config_path) {
    const ExperimentConfig cfg = load_experiment_config(*config_path);
    if (cfg.eval) ec = *cfg.eval;
  }
  cmd_detail::require_writable(out_path, force);
  const std::filesystem::path dir(run_dir);
  nlohmann::json manifest;
  {
    std::ifstream in(dir / "run.json", std::ios::binary);
    if (!in) throw ConfigError("cannot open run manifest: " + (dir / "run.json").string());
    try {
      in >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError((dir / "run.json").string() + ": " + e.what());
    }
  }
  std::vector<std::int64_t> iterations;
  try {
    iterations = manifest.at("snapshot_iterations").get<std::vector<std::int64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError((dir / "run.json").string() + ": " + e.what());
  }
  const Dataset ds = cmd_detail::load_dataset_dir(data_dir, false, nullptr);
  const GroundTruthRelation gt = cmd_detail::as_config_error([&] { return load_gt(gt_path); });
  std::vector<CurvePoint> curve;
  for (std::int64_t it : iterations) {
    const auto ck_path = dir / cmd_detail::checkpoint_filename(it);
    if (!std::filesystem::exists(ck_path))
      throw RunError("missing checkpoint for iteration " + std::to_string(it) + ": " +
                     ck_path.string());
    const Checkpoint ck =
        cmd_detail::as_run_error([&] { return load_checkpoint(ck_path.string()); });
    curve.push_back({it, cmd_detail::as_run_error([&] { return evaluate(ck.model, ds, gt, ec); })});
  }
  cmd_detail::as_run_error([&] {
    write_curve_csv(curve, out_path);
    return 0;
  });
}

}  // namespace fovreg
