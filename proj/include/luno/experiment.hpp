#pragma once

// Experiment pipeline behind the command-line driver. Each stage reads the
// artifacts of earlier stages from the output directory, checks that they
// were produced under the same configuration, and writes its own.
//
// Output directory layout:
//   data/                 dataset (manifest.json + field files)
//   models/member_K.*     trained networks; member 0 is the base model
//   models/loss_K.csv     training history
//   belief_iso.*, belief_la.*
//   calibration.json, metrics.csv, metrics.json, rollout.csv,
//   benchmark.json, samples/

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "luno/belief.hpp"
#include "luno/eval.hpp"
#include "luno/fno.hpp"
#include "luno/pde.hpp"
#include "luno/train.hpp"

namespace luno {

struct ExperimentConfig {
  nlohmann::json resolved;  // profile + config file + overrides
  std::string profile;
  std::uint64_t seed = 0;
  std::string out;

  nlohmann::json scenario;  // {"kind": "1d" | "adr", ...}
  FnoConfig model;
  TrainConfig train;
  int window = 10;
  int ensemble_members = 5;

  int belief_rank = 50;
  double noise_var = 1.0;
  int ggn_max_pairs = 0;  // 0: all training pairs
  EigenMethod ggn_method = EigenMethod::automatic;

  std::vector<std::string> methods;

  int calib_points = 500;
  double calib_decades = 6.0;
  int calib_pairs = 250;
  // Sample-based methods re-run the network per grid value, so they get a
  // coarser search (profile-controlled).
  int sample_calib_points = 500;
  double sample_calib_decades = 6.0;
  int sample_calib_pairs = 250;
  int sample_calib_samples = 200;

  int test_pairs = 250;
  int n_samples = 200;

  int rollout_trajectories = 50;
  int rollout_steps = 0;  // 0: as many as the trajectory allows

  int benchmark_steps = 0;

  /// Hash of the whole resolved configuration and of the parts each stage
  /// depends on (16 hex digits).
  std::string hash() const;
  std::string data_hash() const;
  std::string model_hash() const;
  std::string belief_hash() const;
};

/// Resolves `profile` (a name looked up in the profiles directory, or a
/// path), merges the optional config file and then `overrides` (JSON merge
/// patch), and validates the result.
ExperimentConfig load_config(const std::string& profile, const std::string& config_path,
                             const nlohmann::json& overrides);
ExperimentConfig make_config(const nlohmann::json& resolved);

/// Directory searched for named profiles: $LUNO_PROFILES, else the source
/// tree's profiles/.
std::string profile_directory();

std::string stable_hash(const std::string& text);

/// Provenance block embedded in every artifact.
nlohmann::json provenance(const ExperimentConfig& cfg, const std::string& stage_hash);

struct PairSplit {
  std::vector<std::vector<WindowPair>> train_groups;  // one group per trajectory
  std::vector<WindowPair> valid, test;
};

/// Training windows per trajectory plus seeded random valid/test pairs
/// (pair i comes from trajectory i mod count at a random window offset).
PairSplit make_pairs(const ExperimentConfig& cfg, const Dataset& data);

struct Artifacts {
  Dataset data;
  std::vector<std::shared_ptr<const FnoModel>> members;
  std::optional<WeightBelief> belief_iso, belief_la;
  nlohmann::json calibration;  // empty if not calibrated yet
};

Dataset stage_generate(const ExperimentConfig& cfg);
std::vector<FitResult> stage_train(const ExperimentConfig& cfg);
nlohmann::json stage_fit_belief(const ExperimentConfig& cfg);
nlohmann::json stage_calibrate(const ExperimentConfig& cfg);
std::vector<MetricRecord> stage_evaluate(const ExperimentConfig& cfg);
/// Mean per-step metrics over the rollout trajectories, per method.
std::vector<std::pair<std::string, std::vector<PairMetrics>>> stage_rollout(const ExperimentConfig& cfg, int n_steps);
nlohmann::json stage_sample(const ExperimentConfig& cfg, const std::string& method, int pair_index, int n_samples,
                            const std::string& points_path);
nlohmann::json stage_benchmark(const ExperimentConfig& cfg, int n_steps);

/// Loads whatever artifacts exist, verifying their stage hashes.
Artifacts load_artifacts(const ExperimentConfig& cfg, bool need_models, bool need_beliefs, bool need_calibration);

/// Builds the configured methods; calibrated scales are applied when
/// `apply_calibration` is set and a calibration exists.
std::vector<std::unique_ptr<UqMethod>> make_methods(const ExperimentConfig& cfg, const Artifacts& a,
                                                    bool apply_calibration, int n_samples);

}  // namespace luno
