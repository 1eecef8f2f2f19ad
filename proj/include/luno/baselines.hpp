#pragma once

// Ensemble-style uncertainty baselines: input perturbations, deep
// ensembles and the sample-based (nonlinear) pushforward of a weight
// belief, plus the null-space diagnostic for rank-deficient ensembles.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "luno/belief.hpp"
#include "luno/field.hpp"
#include "luno/fno.hpp"

namespace luno {

struct EnsemblePrediction {
  std::vector<Field> members;

  Field mean() const;
  /// Unbiased (n - 1) pointwise standard deviation; needs >= 2 members.
  Field std() const;
  /// Empirical covariance over the given (channel-outer) output indices.
  Eigen::MatrixXd covariance(std::span<const int> indices) const;
  /// Centered member deviations as columns (outputs x members).
  Eigen::MatrixXd deviations() const;
};

EnsemblePrediction input_perturbations(const FnoModel& model, const Field& input, double sigma_in, int n_samples,
                                       std::uint64_t seed);

EnsemblePrediction deep_ensemble(std::span<const FnoModel> models, const Field& input);

/// Full nonlinear forwards with theta_last = mean + deviation_s.
EnsemblePrediction sample_pushforward(const FnoModel& model, const WeightBelief& belief, const Field& input,
                                      int n_samples, std::uint64_t seed);

/// Numerical rank of the centered member deviations (singular values above
/// tol * s_max).
int ensemble_rank(const EnsemblePrediction& ensemble, double tol = 1e-8);

/// (target - mean) minus its projection onto the span of the centered
/// member deviations; singular directions below tol * s_max are ignored.
Field nullspace_residual(const EnsemblePrediction& ensemble, const Field& target, double tol = 1e-8);

/// Projects `residual` onto the orthogonal complement of span(basis
/// columns), dropping directions with singular value below tol * s_max.
Eigen::VectorXd project_out_span(const Eigen::MatrixXd& basis, const Eigen::VectorXd& residual, double tol);

}  // namespace luno
