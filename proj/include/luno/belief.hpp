#pragma once

// Gaussian beliefs over theta_last: an isotropic N(mu, s^2 I) and the
// low-rank Laplace posterior N(mu, (n V V^T + sigma I)^{-1}), whose
// covariance is only ever applied through the Woodbury identity.

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "luno/linearization.hpp"

namespace luno {

enum class BeliefKind { isotropic, low_rank_laplace };

std::string to_string(BeliefKind k);
BeliefKind parse_belief_kind(const std::string& name);

class WeightBelief {
 public:
  WeightBelief() = default;

  /// N(mean, variance * I); variance 0 gives a point mass.
  static WeightBelief isotropic(Eigen::VectorXd mean, double variance);
  /// N(mean, (n V V^T + sigma I)^{-1}) with sigma = prior_precision > 0.
  static WeightBelief low_rank_laplace(Eigen::VectorXd mean, Eigen::MatrixXd factor, double prior_precision,
                                       double n_data);

  BeliefKind kind() const { return kind_; }
  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// The calibrated scale: the variance (isotropic) or the prior precision.
  double scale() const { return kind_ == BeliefKind::isotropic ? variance_ : prior_precision_; }
  const Eigen::MatrixXd& factor() const { return factor_; }
  double n_data() const { return n_data_; }

  /// Same belief with a different scale (see scale()).
  WeightBelief with_scale(double scale) const;

  /// Orthonormal basis of range(V) and the matching eigenvalues of V^T V
  /// (positive ones only); empty for isotropic beliefs.
  const Eigen::MatrixXd& basis() const { return basis_; }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }

  Eigen::VectorXd cov_matvec(const Eigen::VectorXd& x) const;
  /// Dense covariance; for tests and small P only.
  Eigen::MatrixXd dense_covariance() const;

  /// Deviations theta - mean as columns. Column s depends only on
  /// (seed, s).
  Eigen::MatrixXd sample_theta(int n_samples, std::uint64_t seed) const;

 private:
  BeliefKind kind_ = BeliefKind::isotropic;
  Eigen::VectorXd mean_;
  double variance_ = 0.0;
  Eigen::MatrixXd factor_;
  double prior_precision_ = 1.0;
  double n_data_ = 1.0;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd eigenvalues_;
};

void save_belief(const WeightBelief& belief, const std::string& path, const nlohmann::json& metadata);
WeightBelief load_belief(const std::string& path, nlohmann::json* metadata = nullptr);

enum class EigenMethod { automatic, gram, lanczos };

struct GgnOptions {
  int rank = 50;
  double noise_var = 1.0;
  EigenMethod method = EigenMethod::automatic;
  double tolerance = 1e-8;  // relative Ritz residual
  int max_iterations = 0;   // 0 means 10 * rank
  std::uint64_t seed = 0;
};

struct GgnResult {
  Eigen::MatrixXd factor;       // V, P x rank
  Eigen::VectorXd eigenvalues;  // descending, length rank
  bool converged = true;
  double residual = 0.0;  // largest relative Ritz residual (Lanczos)
  int iterations = 0;
  std::string method;
};

/// Top-`rank` eigenpairs of the mean per-pair GGN
///   H = (1 / n) sum_p J_p^T J_p / noise_var
/// restricted to theta_last, returned as V = U diag(sqrt(lambda)). Uses the
/// Gram matrix when the stacked output dimension does not exceed P, else
/// Lanczos with full reorthogonalization on H x = sum J^T (J x).
/// Non-convergence is reported in the result rather than thrown.
GgnResult ggn_lowrank(const std::vector<LastBlockLinearization>& pairs, const GgnOptions& options);

/// Matrix-free H x for the same operator.
Eigen::VectorXd ggn_matvec(const std::vector<LastBlockLinearization>& pairs, double noise_var,
                           const Eigen::VectorXd& x);

}  // namespace luno
