#pragma once

// Predictive metrics, scale calibration by log-grid search and
// autoregressive rollouts for the uncertainty methods under comparison.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "luno/baselines.hpp"
#include "luno/belief.hpp"
#include "luno/luno.hpp"
#include "luno/train.hpp"

namespace luno {

/// sqrt(mean((mean - target)^2)). Throws on size mismatch or empty input.
double rmse(std::span<const double> mean, std::span<const double> target);
/// Per-point mean of 0.5 log(2 pi s^2) + (y - m)^2 / (2 s^2). Throws on a
/// nonpositive standard deviation.
double marginal_nll(std::span<const double> mean, std::span<const double> std, std::span<const double> target);
/// Per-point mean of (y - m)^2 / s^2.
double chi2(std::span<const double> mean, std::span<const double> std, std::span<const double> target);

struct PairMetrics {
  double rmse = 0.0, nll = 0.0, chi2 = 0.0;
};

/// All three metrics for one prediction; `std_floor` is applied to the
/// standard deviation first.
PairMetrics pair_metrics(const Field& mean, const Field& std, const Field& target, double std_floor = 0.0);

struct MetricRecord {
  std::string method;
  std::string dataset;
  double rmse = 0.0, nll = 0.0, chi2 = 0.0;
  int n_pairs = 0;
};

/// Mean over pairs of the per-pair metrics.
MetricRecord summarize(std::span<const PairMetrics> pairs, const std::string& method, const std::string& dataset);

struct Prediction {
  Field mean;
  Field std;
};

/// Floor applied to every predictive standard deviation before scoring.
inline constexpr double kStdFloor = 1e-12;

/// A predictive method with at most one positive scale hyperparameter.
class UqMethod {
 public:
  virtual ~UqMethod() = default;
  virtual std::string name() const = 0;
  virtual Prediction predict(const Field& input) const = 0;

  virtual bool has_scale() const { return true; }
  virtual double scale() const = 0;
  virtual void set_scale(double value) = 0;

  /// Expected per-point NLL over `pairs` at each scale in `grid`. The
  /// default re-predicts for every grid value; the current scale is kept.
  virtual std::vector<double> nll_curve(std::span<const WindowPair> pairs, std::span<const double> grid);
};

/// Input perturbations; the scale is the perturbation standard deviation.
class InputPerturbationMethod : public UqMethod {
 public:
  InputPerturbationMethod(std::shared_ptr<const FnoModel> model, double sigma_in, int n_samples, std::uint64_t seed);
  std::string name() const override { return "input_perturbations"; }
  Prediction predict(const Field& input) const override;
  double scale() const override { return sigma_; }
  void set_scale(double value) override { sigma_ = value; }
  void set_samples(int n) { n_samples_ = n; }

 private:
  std::shared_ptr<const FnoModel> model_;
  double sigma_;
  int n_samples_;
  std::uint64_t seed_;
};

/// Deep ensemble of independently trained models; no scale parameter.
class DeepEnsembleMethod : public UqMethod {
 public:
  explicit DeepEnsembleMethod(std::vector<FnoModel> members);
  std::string name() const override { return "ensemble"; }
  Prediction predict(const Field& input) const override;
  bool has_scale() const override { return false; }
  double scale() const override { return 1.0; }
  void set_scale(double) override {}
  const std::vector<FnoModel>& members() const { return members_; }

 private:
  std::vector<FnoModel> members_;
};

/// Nonlinear pushforward of weight samples (Sample-Iso / Sample-LA). The
/// scale is the belief scale (variance or prior precision).
class SampleMethod : public UqMethod {
 public:
  SampleMethod(std::shared_ptr<const FnoModel> model, WeightBelief belief, int n_samples, std::uint64_t seed);
  std::string name() const override;
  Prediction predict(const Field& input) const override;
  double scale() const override { return belief_.scale(); }
  void set_scale(double value) override { belief_ = belief_.with_scale(value); }
  void set_samples(int n) { n_samples_ = n; }
  const WeightBelief& belief() const { return belief_; }

 private:
  std::shared_ptr<const FnoModel> model_;
  WeightBelief belief_;
  int n_samples_;
  std::uint64_t seed_;
};

/// Linearized pushforward (LUNO-Iso / LUNO-LA). Calibration reuses the
/// per-pair variance terms, so the NLL curve costs one linearization per
/// pair regardless of the grid size.
class LunoMethod : public UqMethod {
 public:
  LunoMethod(std::shared_ptr<const FnoModel> model, WeightBelief belief);
  std::string name() const override;
  Prediction predict(const Field& input) const override;
  double scale() const override { return belief_.scale(); }
  void set_scale(double value) override { belief_ = belief_.with_scale(value); }
  std::vector<double> nll_curve(std::span<const WindowPair> pairs, std::span<const double> grid) override;
  const WeightBelief& belief() const { return belief_; }
  const std::shared_ptr<const FnoModel>& model() const { return model_; }

 private:
  std::shared_ptr<const FnoModel> model_;
  WeightBelief belief_;
};

/// `n_points` values center * 10^t with t evenly spaced over
/// [-decades/2, decades/2]; a single point is the center itself.
std::vector<double> log_grid(double center, int n_points, double decades);

struct CalibrationResult {
  double best = 0.0;
  int best_index = 0;
  std::vector<double> grid;
  std::vector<double> curve;  // expected NLL per grid value
};

/// Grid search for the scale minimizing the expected NLL on `pairs`; the
/// method is left at the best value. Non-finite curve values are skipped;
/// throws std::runtime_error if none is finite.
CalibrationResult calibrate(UqMethod& method, std::span<const WindowPair> pairs, double center, int n_points = 500,
                            double decades = 6.0);

/// Heuristic centre for the calibration grid: the scale at which the mean
/// predicted variance matches the mean squared residual on `pairs`.
double moment_matched_scale(const LunoMethod& method, std::span<const WindowPair> pairs);

struct EvalResult {
  MetricRecord summary;
  std::vector<PairMetrics> pairs;
};

EvalResult evaluate(const UqMethod& method, std::span<const WindowPair> pairs, const std::string& dataset);

struct RolloutResult {
  std::vector<Prediction> steps;
  std::vector<PairMetrics> metrics;  // one per step, vs the true frame
};

/// Autoregressive rollout: the initial input is the window ending at frame
/// start + window - 1; each step's mean becomes the newest frame while aux
/// channels stay fixed. Throws std::runtime_error if the mean blows up.
RolloutResult rollout(const UqMethod& method, const Trajectory& traj, int window, int n_steps, int start = 0);

}  // namespace luno
