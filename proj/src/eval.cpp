#include "luno/eval.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace luno {

namespace {

void check_sizes(std::size_t a, std::size_t b, const char* who) {
  if (a != b) throw std::invalid_argument(std::string(who) + ": size mismatch");
  if (a == 0) throw std::invalid_argument(std::string(who) + ": empty input");
}

void check_std(std::span<const double> std, const char* who) {
  for (double s : std)
    if (!(s > 0.0)) throw std::invalid_argument(std::string(who) + ": standard deviation must be positive");
}

void check_shape(const Field& a, const Field& b, const char* who) {
  if (!(a.grid == b.grid) || a.channels != b.channels) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

}  // namespace

double rmse(std::span<const double> mean, std::span<const double> target) {
  check_sizes(mean.size(), target.size(), "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) s += (mean[i] - target[i]) * (mean[i] - target[i]);
  return std::sqrt(s / static_cast<double>(mean.size()));
}

double marginal_nll(std::span<const double> mean, std::span<const double> std, std::span<const double> target) {
  check_sizes(mean.size(), target.size(), "marginal_nll");
  check_sizes(std.size(), target.size(), "marginal_nll");
  check_std(std, "marginal_nll");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double s = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double z = (target[i] - mean[i]) / std[i];
    s += half_log_2pi + std::log(std[i]) + 0.5 * z * z;
  }
  return s / static_cast<double>(mean.size());
}

double chi2(std::span<const double> mean, std::span<const double> std, std::span<const double> target) {
  check_sizes(mean.size(), target.size(), "chi2");
  check_sizes(std.size(), target.size(), "chi2");
  check_std(std, "chi2");
  double s = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double z = (target[i] - mean[i]) / std[i];
    s += z * z;
  }
  return s / static_cast<double>(mean.size());
}

PairMetrics pair_metrics(const Field& mean, const Field& std, const Field& target, double std_floor) {
  check_shape(mean, target, "pair_metrics");
  check_shape(std, target, "pair_metrics");
  std::vector<double> s = std.values;
  for (double& v : s) v = std::max(v, std_floor);
  return {rmse(mean.values, target.values), marginal_nll(mean.values, s, target.values),
          chi2(mean.values, s, target.values)};
}

MetricRecord summarize(std::span<const PairMetrics> pairs, const std::string& method, const std::string& dataset) {
  MetricRecord r{method, dataset};
  for (const auto& p : pairs) {
    r.rmse += p.rmse;
    r.nll += p.nll;
    r.chi2 += p.chi2;
  }
  r.n_pairs = static_cast<int>(pairs.size());
  if (r.n_pairs > 0) {
    r.rmse /= r.n_pairs;
    r.nll /= r.n_pairs;
    r.chi2 /= r.n_pairs;
  }
  return r;
}

std::vector<double> UqMethod::nll_curve(std::span<const WindowPair> pairs, std::span<const double> grid) {
  const double keep = scale();
  std::vector<double> curve;
  curve.reserve(grid.size());
  for (double s : grid) {
    set_scale(s);
    double total = 0.0;
    for (const auto& p : pairs) {
      const Prediction pred = predict(p.input);
      total += pair_metrics(pred.mean, pred.std, p.target, kStdFloor).nll;
    }
    curve.push_back(total / static_cast<double>(pairs.size()));
  }
  set_scale(keep);
  return curve;
}

namespace {

Prediction from_ensemble(const EnsemblePrediction& e) { return {e.mean(), e.std()}; }

}  // namespace

InputPerturbationMethod::InputPerturbationMethod(std::shared_ptr<const FnoModel> model, double sigma_in,
                                                 int n_samples, std::uint64_t seed)
    : model_(std::move(model)), sigma_(sigma_in), n_samples_(n_samples), seed_(seed) {
  if (n_samples < 2) throw std::invalid_argument("input perturbations: need at least two samples");
}

Prediction InputPerturbationMethod::predict(const Field& input) const {
  return from_ensemble(input_perturbations(*model_, input, sigma_, n_samples_, seed_));
}

DeepEnsembleMethod::DeepEnsembleMethod(std::vector<FnoModel> members) : members_(std::move(members)) {
  if (members_.size() < 2) throw std::invalid_argument("deep ensemble: needs at least two members");
}

Prediction DeepEnsembleMethod::predict(const Field& input) const {
  return from_ensemble(deep_ensemble(members_, input));
}

SampleMethod::SampleMethod(std::shared_ptr<const FnoModel> model, WeightBelief belief, int n_samples,
                           std::uint64_t seed)
    : model_(std::move(model)), belief_(std::move(belief)), n_samples_(n_samples), seed_(seed) {
  if (n_samples < 2) throw std::invalid_argument("sample pushforward: need at least two samples");
}

std::string SampleMethod::name() const {
  return belief_.kind() == BeliefKind::isotropic ? "sample_iso" : "sample_la";
}

Prediction SampleMethod::predict(const Field& input) const {
  return from_ensemble(sample_pushforward(*model_, belief_, input, n_samples_, seed_));
}

LunoMethod::LunoMethod(std::shared_ptr<const FnoModel> model, WeightBelief belief)
    : model_(std::move(model)), belief_(std::move(belief)) {
  if (belief_.mean() != theta_last(*model_)) throw std::invalid_argument("LUNO: belief/model mismatch");
}

std::string LunoMethod::name() const {
  return belief_.kind() == BeliefKind::isotropic ? "luno_iso" : "luno_la";
}

Prediction LunoMethod::predict(const Field& input) const {
  const PredictiveGp gp(model_, belief_, input);
  return {gp.mean_grid(), gp.marginal_std_grid()};
}

namespace {

struct PairTerms {
  std::vector<double> residual_sq;
  VarianceTerms terms;
};

std::vector<PairTerms> pair_terms(const std::shared_ptr<const FnoModel>& model, const WeightBelief& belief,
                                  std::span<const WindowPair> pairs) {
  std::vector<PairTerms> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const PredictiveGp gp(model, belief, p.input);
    check_shape(gp.mean_grid(), p.target, "calibration");
    PairTerms t;
    t.residual_sq.resize(p.target.values.size());
    for (std::size_t i = 0; i < t.residual_sq.size(); ++i) {
      const double r = p.target.values[i] - gp.mean_grid().values[i];
      t.residual_sq[i] = r * r;
    }
    t.terms = gp.variance_terms_grid();
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::vector<double> LunoMethod::nll_curve(std::span<const WindowPair> pairs, std::span<const double> grid) {
  const auto terms = pair_terms(model_, belief_, pairs);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const double floor_var = kStdFloor * kStdFloor;
  std::vector<double> curve;
  curve.reserve(grid.size());
  for (double s : grid) {
    double total = 0.0;
    for (const auto& t : terms) {
      const std::vector<double> var = t.terms.variance(belief_, s);
      double pair = 0.0;
      for (std::size_t i = 0; i < var.size(); ++i) {
        const double v = std::max(var[i], floor_var);
        pair += half_log_2pi + 0.5 * std::log(v) + 0.5 * t.residual_sq[i] / v;
      }
      total += pair / static_cast<double>(var.size());
    }
    curve.push_back(total / static_cast<double>(terms.size()));
  }
  return curve;
}

double moment_matched_scale(const LunoMethod& method, std::span<const WindowPair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("moment_matched_scale: no pairs");
  const auto terms = pair_terms(method.model(), method.belief(), pairs);
  double target = 0.0;
  std::size_t count = 0;
  for (const auto& t : terms)
    for (double r : t.residual_sq) {
      target += r;
      ++count;
    }
  target /= static_cast<double>(count);
  auto mean_var = [&](double s) {
    double v = 0.0;
    for (const auto& t : terms)
      for (double x : t.terms.variance(method.belief(), s)) v += x;
    return v / static_cast<double>(count);
  };
  if (method.belief().kind() == BeliefKind::isotropic) {
    const double unit = mean_var(1.0);
    if (!(unit > 0.0)) throw std::runtime_error("moment_matched_scale: zero Jacobian");
    return target / unit;
  }
  // Laplace variance decreases monotonically in the prior precision.
  double lo = -60.0, hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_var(std::exp(mid)) > target ? lo : hi) = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

std::vector<double> log_grid(double center, int n_points, double decades) {
  if (!(center > 0.0) || n_points < 1 || !(decades >= 0.0))
    throw std::invalid_argument("log_grid: need center > 0, n_points >= 1, decades >= 0");
  if (n_points == 1) return {center};
  std::vector<double> g(n_points);
  for (int i = 0; i < n_points; ++i) {
    const double t = decades * (static_cast<double>(i) / (n_points - 1) - 0.5);
    g[i] = center * std::pow(10.0, t);
  }
  return g;
}

CalibrationResult calibrate(UqMethod& method, std::span<const WindowPair> pairs, double center, int n_points,
                            double decades) {
  if (!method.has_scale()) throw std::invalid_argument("calibrate: method has no scale parameter");
  if (pairs.empty()) throw std::invalid_argument("calibrate: empty validation set");
  CalibrationResult r;
  r.grid = log_grid(center, n_points, decades);
  r.curve = method.nll_curve(pairs, r.grid);
  r.best_index = -1;
  for (int i = 0; i < static_cast<int>(r.curve.size()); ++i)
    if (std::isfinite(r.curve[i]) && (r.best_index < 0 || r.curve[i] < r.curve[r.best_index])) r.best_index = i;
  if (r.best_index < 0) throw std::runtime_error("calibrate: NLL is not finite anywhere on the grid");
  r.best = r.grid[r.best_index];
  method.set_scale(r.best);
  return r;
}

EvalResult evaluate(const UqMethod& method, std::span<const WindowPair> pairs, const std::string& dataset) {
  EvalResult r;
  r.pairs.reserve(pairs.size());
  for (const auto& p : pairs) {
    const Prediction pred = method.predict(p.input);
    r.pairs.push_back(pair_metrics(pred.mean, pred.std, p.target, kStdFloor));
  }
  r.summary = summarize(r.pairs, method.name(), dataset);
  return r;
}

RolloutResult rollout(const UqMethod& method, const Trajectory& traj, int window, int n_steps, int start) {
  traj.validate();
  if (n_steps < 1) throw std::invalid_argument("rollout: n_steps must be positive");
  if (window < 1 || start < 0 || start + window + n_steps > static_cast<int>(traj.frames.size()))
    throw std::invalid_argument("rollout: trajectory too short for the requested steps");
  std::deque<Field> frames(traj.frames.begin() + start, traj.frames.begin() + start + window);
  RolloutResult r;
  for (int s = 0; s < n_steps; ++s) {
    const std::vector<Field> win(frames.begin(), frames.end());
    Prediction pred = method.predict(stack_window(win, traj.aux));
    for (double v : pred.mean.values)
      if (!std::isfinite(v) || std::abs(v) > 1e6) throw std::runtime_error("rollout: prediction blew up");
    r.metrics.push_back(pair_metrics(pred.mean, pred.std, traj.frames[start + window + s], kStdFloor));
    frames.pop_front();
    frames.push_back(pred.mean);
    r.steps.push_back(std::move(pred));
  }
  return r;
}

}  // namespace luno
