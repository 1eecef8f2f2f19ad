#pragma once

// Linearization of an FNO in the parameters of its final Fourier block.
//
// The pre-activation of the last block is linear in
//   theta_last = (Re R, Im R, W),
// with feature functions of the hidden state h = v^(L-1):
//   phi_mj(x)    =  (w_m / N) Re(h_mj E_m(x)),
//   varphi_mj(x) = -(w_m / N) Im(h_mj E_m(x)),
//   psi_j(x)     =  v_j(x)  (Fourier interpolant of the hidden state),
// so that z_i(x) = sum_mj Re R_mij phi_mj + Im R_mij varphi_mj + sum_j W_ij psi_j
// (plus the bias b_i, which is not part of theta_last). The output is
// Q~(z) = Q(act(z)); its Jacobian J_Q~ is evaluated pointwise.
//
// Flattening of theta_last: Re R[m][i][j] at m*d*d + i*d + j, then Im R at
// offset M*d*d, then W[i][j] at offset 2*M*d*d; P = 2*M*d*d + d*d.

#include <Eigen/Dense>

#include <memory>
#include <span>
#include <vector>

#include "luno/field.hpp"
#include "luno/fno.hpp"

namespace luno {

struct ThetaLayout {
  int modes = 0;  // retained modes M (modes^dims)
  int width = 0;  // hidden channels d

  static ThetaLayout of(const FnoConfig& config) { return {config.mode_count(), config.hidden_channels}; }
  std::size_t size() const { return static_cast<std::size_t>(2 * modes + 1) * width * width; }
  std::size_t re(int m, int i, int j) const { return (static_cast<std::size_t>(m) * width + i) * width + j; }
  std::size_t im(int m, int i, int j) const { return static_cast<std::size_t>(modes) * width * width + re(m, i, j); }
  std::size_t w(int i, int j) const { return static_cast<std::size_t>(2 * modes) * width * width + i * width + j; }
  /// Length of the per-point feature vector: (phi, varphi, psi).
  int feature_size() const { return (2 * modes + 1) * width; }
};

Eigen::VectorXd theta_last(const FnoModel& model);
void set_theta_last(FnoModel& model, const Eigen::VectorXd& theta);

/// J_Q~(z): out_channels x hidden_channels Jacobian of the projection
/// composed with the last activation, at a single pre-activation vector.
Eigen::MatrixXd projection_jacobian(const FnoModel& model, const Eigen::VectorXd& z);
/// Q~(z) at a single pre-activation vector.
Eigen::VectorXd project_point(const FnoModel& model, const Eigen::VectorXd& z);

class LastBlockLinearization {
 public:
  /// Runs one forward pass and keeps everything later queries need.
  LastBlockLinearization(const FnoModel& model, const Field& input);
  LastBlockLinearization(std::shared_ptr<const FnoModel> model, const Field& input);

  /// Drops the intermediates that grid queries do not need (earlier block
  /// activations, lifting and projection buffers). Used when many
  /// linearizations are held at once, e.g. for the GGN.
  void release_intermediates();

  const FnoModel& model() const { return *model_; }
  const ThetaLayout& layout() const { return layout_; }
  const Grid& grid() const { return input_grid_; }
  const Grid& network_grid() const { return hidden_.grid; }
  const HiddenState& hidden() const { return hidden_; }
  const Eigen::VectorXd& theta_map() const { return theta_; }
  int out_channels() const { return model_->config.out_channels; }
  std::size_t parameter_count() const { return layout_.size(); }

  /// Forward output on the input grid.
  const Field& output() const { return output_; }

  /// Feature vector (phi, varphi, psi) at a point of the domain.
  Eigen::VectorXd features(const Point& x) const;
  /// Squared norm of the feature vector at each point.
  std::vector<double> feature_sqnorm(std::span<const Point> points) const;
  /// As above at every point of the input grid.
  std::vector<double> feature_sqnorm_grid() const;

  /// Linear part of the last pre-activation, sum of features times theta
  /// (hidden x points, channel-outer). The block bias is added only when
  /// `with_bias` is set.
  std::vector<double> reconstruct_z(const Eigen::VectorXd& theta, std::span<const Point> points,
                                    bool with_bias = false) const;
  /// Same on the network grid via the inverse real FFT.
  Field reconstruct_z_grid(const Eigen::VectorXd& theta, bool with_bias = false) const;

  /// MAP pre-activation m_z and mean output Q~(m_z) at arbitrary points.
  std::vector<double> mean_z(std::span<const Point> points) const;
  std::vector<double> mean(std::span<const Point> points) const;

  /// J_Q~ at each input-grid point (out x hidden).
  const Eigen::MatrixXd& projection_jacobian_grid(int p) const { return jq_grid_[p]; }

  /// Directional derivative of the output in theta_last, on the input grid
  /// (inverse-FFT path) or at arbitrary points (trigonometric path).
  Field jvp_grid(const Eigen::VectorXd& dtheta) const;
  std::vector<double> jvp(const Eigen::VectorXd& dtheta, std::span<const Point> points) const;

  /// Transposed Jacobian applied to an output-shaped cotangent on the
  /// input grid.
  Eigen::VectorXd vjp_grid(const Field& cotangent) const;

  /// Dense Jacobian rows, one per (channel, point), channel-outer.
  Eigen::MatrixXd jacobian_rows(std::span<const Point> points) const;
  Eigen::MatrixXd jacobian_grid() const;

 private:
  int network_index(int p) const;
  Eigen::VectorXd z_from_features(const Eigen::VectorXd& theta, const Eigen::VectorXd& f) const;
  void scatter_row(const Eigen::MatrixXd& jq, const Eigen::VectorXd& f, int o, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) const;

  std::shared_ptr<const FnoModel> model_;
  ThetaLayout layout_;
  Grid input_grid_;
  HiddenState hidden_;
  Field output_;
  ModeSet modes_;
  Eigen::VectorXd theta_;
  SpectralField v_spec_;  // full spectrum of v^(L-1)
  std::vector<Eigen::MatrixXd> jq_grid_;
};

}  // namespace luno
