#pragma once

// Function-valued Gaussian process over FNO outputs: the linearized
// pushforward of a weight belief over theta_last,
//   pi(a) ~ GP(m_a, K_a),
//   m_a(x)      = G(a, mu)(x),
//   K_a(x1, x2) = J_Q~(m_z(x1)) K_z(x1, x2) J_Q~(m_z(x2))^T,
// evaluated lazily from one forward pass per input function.

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "luno/belief.hpp"
#include "luno/linearization.hpp"

namespace luno {

/// One draw from the GP: mean + J dtheta for a fixed weight deviation.
/// Evaluable on the input grid or at any point of the domain.
class FunctionSample {
 public:
  FunctionSample(std::shared_ptr<const LastBlockLinearization> lin, Eigen::VectorXd deviation)
      : lin_(std::move(lin)), deviation_(std::move(deviation)) {}

  Field evaluate_grid() const;
  /// channels x points, channel-outer.
  std::vector<double> evaluate(std::span<const Point> points) const;
  const Eigen::VectorXd& deviation() const { return deviation_; }

 private:
  std::shared_ptr<const LastBlockLinearization> lin_;
  Eigen::VectorXd deviation_;
};

/// Per-output quantities from which the marginal variance follows for any
/// value of the belief scale:
///   isotropic: var = s2 * row_sqnorm
///   Laplace:   var = row_sqnorm / sigma
///                    - sum_c proj_c^2 (1/sigma - 1/(n lambda_c + sigma))
/// where proj = J q_c for the orthonormal basis q of range(V).
struct VarianceTerms {
  std::vector<double> row_sqnorm;  // ||J row||^2, channel-outer
  Eigen::MatrixXd basis_proj;      // rows x basis size (Laplace only)

  std::vector<double> variance(const WeightBelief& belief) const;
  std::vector<double> variance(const WeightBelief& belief, double scale) const;
};

class PredictiveGp {
 public:
  /// Throws std::invalid_argument unless the belief mean equals the
  /// model's theta_last.
  PredictiveGp(std::shared_ptr<const FnoModel> model, WeightBelief belief, const Field& input);
  PredictiveGp(const FnoModel& model, WeightBelief belief, const Field& input);

  const LastBlockLinearization& linearization() const { return *lin_; }
  const WeightBelief& belief() const { return belief_; }
  const Grid& grid() const { return lin_->grid(); }
  int out_channels() const { return lin_->out_channels(); }

  const Field& mean_grid() const { return lin_->output(); }
  std::vector<double> mean(std::span<const Point> points) const;

  /// (out * |p1|) x (out * |p2|) block matrix, rows/cols channel-outer.
  Eigen::MatrixXd cov(std::span<const Point> points1, std::span<const Point> points2) const;

  std::vector<double> marginal_std(std::span<const Point> points) const;
  Field marginal_std_grid() const;

  VarianceTerms variance_terms(std::span<const Point> points) const;
  VarianceTerms variance_terms_grid() const;

  /// Samples with deviations belief.sample_theta(n, seed).
  std::vector<FunctionSample> sample_functions(int n_samples, std::uint64_t seed) const;

  /// Linearized output for an explicit weight deviation, on the grid.
  Field jvp_grid(const Eigen::VectorXd& deviation) const { return lin_->jvp_grid(deviation); }

 private:
  std::shared_ptr<const LastBlockLinearization> lin_;
  WeightBelief belief_;
};

/// Covariance between the GPs of two input functions sharing one belief.
Eigen::MatrixXd cross_cov(const PredictiveGp& a, std::span<const Point> points_a, const PredictiveGp& b,
                          std::span<const Point> points_b);

/// Multi-output GP on the augmented index (input function, grid point,
/// channel), computed from full reverse-mode gradients of the network
/// rather than from the feature maps. Used to check currying.
class AugmentedIndexGp {
 public:
  AugmentedIndexGp(FnoModel model, WeightBelief belief);

  double mean(const Field& input, int point, int channel) const;
  double cov(const Field& a1, int point1, int channel1, const Field& a2, int point2, int channel2) const;
  /// d G(a)(x_point)_channel / d theta_last.
  Eigen::VectorXd gradient(const Field& input, int point, int channel) const;

 private:
  FnoModel model_;
  WeightBelief belief_;
};

/// Residual minus its projection onto the column span of the Jacobian
/// (the range of any full-rank-in-theta LUNO covariance) on the grid.
/// Directions with singular value below tol * s_max are treated as null.
Field feature_span_residual(const LastBlockLinearization& lin, const Field& residual, double tol = 1e-8);

}  // namespace luno
