#include "luno/luno.hpp"

#include <cmath>
#include <stdexcept>

namespace luno {

Field FunctionSample::evaluate_grid() const {
  Field out = lin_->jvp_grid(deviation_);
  const Field& m = lin_->output();
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += m.values[i];
  return out;
}

std::vector<double> FunctionSample::evaluate(std::span<const Point> points) const {
  std::vector<double> out = lin_->jvp(deviation_, points);
  const std::vector<double> m = lin_->mean(points);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += m[i];
  return out;
}

std::vector<double> VarianceTerms::variance(const WeightBelief& belief) const {
  return variance(belief, belief.scale());
}

std::vector<double> VarianceTerms::variance(const WeightBelief& belief, double scale) const {
  std::vector<double> var(row_sqnorm.size());
  if (belief.kind() == BeliefKind::isotropic) {
    for (std::size_t i = 0; i < var.size(); ++i) var[i] = scale * row_sqnorm[i];
    return var;
  }
  const double n = belief.n_data();
  const Eigen::VectorXd& lam = belief.eigenvalues();
  Eigen::VectorXd shrink(lam.size());
  for (Eigen::Index c = 0; c < lam.size(); ++c) shrink(c) = 1.0 / scale - 1.0 / (n * lam(c) + scale);
  for (std::size_t i = 0; i < var.size(); ++i) {
    double v = row_sqnorm[i] / scale;
    if (basis_proj.cols() > 0) v -= basis_proj.row(static_cast<Eigen::Index>(i)).cwiseAbs2().dot(shrink);
    var[i] = std::max(v, 0.0);
  }
  return var;
}

PredictiveGp::PredictiveGp(const FnoModel& model, WeightBelief belief, const Field& input)
    : PredictiveGp(std::make_shared<const FnoModel>(model), std::move(belief), input) {}

PredictiveGp::PredictiveGp(std::shared_ptr<const FnoModel> model, WeightBelief belief, const Field& input)
    : belief_(std::move(belief)) {
  if (belief_.mean() != theta_last(*model))
    throw std::invalid_argument("predictive GP: belief mean differs from the model's last-block parameters");
  lin_ = std::make_shared<const LastBlockLinearization>(std::move(model), input);
}

std::vector<double> PredictiveGp::mean(std::span<const Point> points) const { return lin_->mean(points); }

Eigen::MatrixXd cross_cov(const PredictiveGp& a, std::span<const Point> points_a, const PredictiveGp& b,
                          std::span<const Point> points_b) {
  if (a.belief().dim() != b.belief().dim()) throw std::invalid_argument("cross_cov: beliefs differ");
  const Eigen::MatrixXd ja = a.linearization().jacobian_rows(points_a);
  const Eigen::MatrixXd jb = b.linearization().jacobian_rows(points_b);
  // Sigma J_b^T, one column per output of b.
  Eigen::MatrixXd sjb(jb.cols(), jb.rows());
  for (Eigen::Index r = 0; r < jb.rows(); ++r) sjb.col(r) = a.belief().cov_matvec(jb.row(r).transpose());
  return ja * sjb;
}

Eigen::MatrixXd PredictiveGp::cov(std::span<const Point> points1, std::span<const Point> points2) const {
  return cross_cov(*this, points1, *this, points2);
}

VarianceTerms PredictiveGp::variance_terms(std::span<const Point> points) const {
  const Eigen::MatrixXd j = lin_->jacobian_rows(points);
  VarianceTerms t;
  t.row_sqnorm.resize(j.rows());
  for (Eigen::Index r = 0; r < j.rows(); ++r) t.row_sqnorm[r] = j.row(r).squaredNorm();
  if (belief_.kind() == BeliefKind::low_rank_laplace) t.basis_proj = j * belief_.basis();
  return t;
}

VarianceTerms PredictiveGp::variance_terms_grid() const {
  const Grid& g = lin_->grid();
  const int np = g.points(), nout = out_channels();
  VarianceTerms t;
  t.row_sqnorm.resize(static_cast<std::size_t>(nout) * np);
  // ||J row||^2 = ||J_Q~ row||^2 ||f(x)||^2 because rows are J_Q~ (x) f.
  const std::vector<double> fsq = lin_->feature_sqnorm_grid();
  for (int p = 0; p < np; ++p) {
    const Eigen::MatrixXd& jq = lin_->projection_jacobian_grid(p);
    for (int o = 0; o < nout; ++o) t.row_sqnorm[o * np + p] = jq.row(o).squaredNorm() * fsq[p];
  }
  if (belief_.kind() == BeliefKind::low_rank_laplace) {
    const Eigen::MatrixXd& q = belief_.basis();
    t.basis_proj.resize(static_cast<Eigen::Index>(nout) * np, q.cols());
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
      const Field col = lin_->jvp_grid(q.col(c));
      t.basis_proj.col(c) = Eigen::Map<const Eigen::VectorXd>(col.values.data(), col.values.size());
    }
  }
  return t;
}

std::vector<double> PredictiveGp::marginal_std(std::span<const Point> points) const {
  std::vector<double> v = variance_terms(points).variance(belief_);
  for (double& x : v) x = std::sqrt(x);
  return v;
}

Field PredictiveGp::marginal_std_grid() const {
  std::vector<double> v = variance_terms_grid().variance(belief_);
  for (double& x : v) x = std::sqrt(x);
  return Field(lin_->grid(), out_channels(), std::move(v));
}

std::vector<FunctionSample> PredictiveGp::sample_functions(int n_samples, std::uint64_t seed) const {
  const Eigen::MatrixXd dev = belief_.sample_theta(n_samples, seed);
  std::vector<FunctionSample> out;
  out.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) out.emplace_back(lin_, dev.col(s));
  return out;
}

AugmentedIndexGp::AugmentedIndexGp(FnoModel model, WeightBelief belief)
    : model_(std::move(model)), belief_(std::move(belief)) {
  if (belief_.mean() != theta_last(model_)) throw std::invalid_argument("augmented GP: belief/model mismatch");
}

double AugmentedIndexGp::mean(const Field& input, int point, int channel) const {
  return forward(model_, input).at(channel, point);
}

Eigen::VectorXd AugmentedIndexGp::gradient(const Field& input, int point, int channel) const {
  auto [out, hs] = forward_with_hidden(model_, input);
  Field onehot(out.grid, out.channels);
  onehot.at(channel, point) = 1.0;
  return theta_last(backward(model_, hs, onehot));
}

double AugmentedIndexGp::cov(const Field& a1, int point1, int channel1, const Field& a2, int point2,
                             int channel2) const {
  const Eigen::VectorXd g1 = gradient(a1, point1, channel1);
  const Eigen::VectorXd g2 = gradient(a2, point2, channel2);
  return g1.dot(belief_.cov_matvec(g2));
}

Field feature_span_residual(const LastBlockLinearization& lin, const Field& residual, double tol) {
  if (!(residual.grid == lin.grid()) || residual.channels != lin.out_channels())
    throw std::invalid_argument("feature_span_residual: shape mismatch");
  const Eigen::MatrixXd j = lin.jacobian_grid();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j * j.transpose());
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double cutoff = tol * tol * std::max(lam.maxCoeff(), 0.0);
  Eigen::Map<const Eigen::VectorXd> r(residual.values.data(), residual.values.size());
  Eigen::VectorXd out = r;
  for (Eigen::Index c = 0; c < lam.size(); ++c)
    if (lam(c) > cutoff && lam(c) > 0.0) out -= es.eigenvectors().col(c) * es.eigenvectors().col(c).dot(r);
  return Field(residual.grid, residual.channels, std::vector<double>(out.data(), out.data() + out.size()));
}

}  // namespace luno
