#include "luno/baselines.hpp"

#include <cmath>
#include <stdexcept>

#include "luno/linearization.hpp"
#include "luno/rng.hpp"

namespace luno {

Field EnsemblePrediction::mean() const {
  if (members.empty()) throw std::invalid_argument("ensemble: no members");
  // Accumulate offsets from the first member so identical members give an
  // exactly zero spread.
  const Field& ref = members[0];
  std::vector<double> acc(ref.values.size(), 0.0);
  for (const auto& m : members)
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m.values[i] - ref.values[i];
  Field out = ref;
  for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] += acc[i] / static_cast<double>(members.size());
  return out;
}

Field EnsemblePrediction::std() const {
  if (members.size() < 2) throw std::invalid_argument("ensemble: standard deviation needs two members");
  const Field mu = mean();
  Field out(mu.grid, mu.channels);
  for (const auto& m : members)
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      const double r = m.values[i] - mu.values[i];
      out.values[i] += r * r;
    }
  for (double& v : out.values) v = std::sqrt(v / static_cast<double>(members.size() - 1));
  return out;
}

Eigen::MatrixXd EnsemblePrediction::deviations() const {
  const Field mu = mean();
  Eigen::MatrixXd d(mu.values.size(), members.size());
  for (std::size_t s = 0; s < members.size(); ++s)
    for (std::size_t i = 0; i < mu.values.size(); ++i) d(i, s) = members[s].values[i] - mu.values[i];
  return d;
}

Eigen::MatrixXd EnsemblePrediction::covariance(std::span<const int> indices) const {
  if (members.size() < 2) throw std::invalid_argument("ensemble: covariance needs two members");
  const Field mu = mean();
  const auto k = static_cast<Eigen::Index>(indices.size());
  Eigen::MatrixXd d(k, members.size());
  for (std::size_t s = 0; s < members.size(); ++s)
    for (Eigen::Index i = 0; i < k; ++i) d(i, s) = members[s].values[indices[i]] - mu.values[indices[i]];
  return d * d.transpose() / static_cast<double>(members.size() - 1);
}

EnsemblePrediction input_perturbations(const FnoModel& model, const Field& input, double sigma_in, int n_samples,
                                       std::uint64_t seed) {
  if (!(sigma_in >= 0.0)) throw std::invalid_argument("input perturbations: negative sigma");
  EnsemblePrediction e;
  e.members.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    Rng rng(seed, {0x696e707574ULL, static_cast<std::uint64_t>(s)});
    Field a = input;
    for (double& v : a.values) v += sigma_in * rng.normal();
    e.members.push_back(forward(model, a));
  }
  return e;
}

EnsemblePrediction deep_ensemble(std::span<const FnoModel> models, const Field& input) {
  if (models.size() < 2) throw std::invalid_argument("deep ensemble: needs at least two members");
  EnsemblePrediction e;
  for (const auto& m : models) {
    if (!(m.config == models[0].config)) throw std::invalid_argument("deep ensemble: member configs differ");
    e.members.push_back(forward(m, input));
  }
  return e;
}

EnsemblePrediction sample_pushforward(const FnoModel& model, const WeightBelief& belief, const Field& input,
                                      int n_samples, std::uint64_t seed) {
  const Eigen::VectorXd mu = theta_last(model);
  if (belief.mean() != mu) throw std::invalid_argument("sample pushforward: belief/model mismatch");
  const Eigen::MatrixXd dev = belief.sample_theta(n_samples, seed);
  FnoModel m = model;
  EnsemblePrediction e;
  e.members.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    set_theta_last(m, mu + dev.col(s));
    e.members.push_back(forward(m, input));
  }
  return e;
}

namespace {

Eigen::MatrixXd span_basis(const Eigen::MatrixXd& a, double tol) {
  if (a.cols() == 0) return Eigen::MatrixXd(a.rows(), 0);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU);
  const Eigen::VectorXd& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > tol * smax && s(rank) > 0.0) ++rank;
  return svd.matrixU().leftCols(rank);
}

}  // namespace

int ensemble_rank(const EnsemblePrediction& ensemble, double tol) {
  return static_cast<int>(span_basis(ensemble.deviations(), tol).cols());
}

Eigen::VectorXd project_out_span(const Eigen::MatrixXd& basis, const Eigen::VectorXd& residual, double tol) {
  const Eigen::MatrixXd u = span_basis(basis, tol);
  return residual - u * (u.transpose() * residual);
}

Field nullspace_residual(const EnsemblePrediction& ensemble, const Field& target, double tol) {
  if (ensemble.members.size() < 2) throw std::invalid_argument("nullspace residual: needs at least two members");
  const Field mu = ensemble.mean();
  if (!(target.grid == mu.grid) || target.channels != mu.channels)
    throw std::invalid_argument("nullspace residual: target shape mismatch");
  Eigen::VectorXd r(mu.values.size());
  for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = target.values[i] - mu.values[i];
  const Eigen::VectorXd out = project_out_span(ensemble.deviations(), r, tol);
  return Field(mu.grid, mu.channels, std::vector<double>(out.data(), out.data() + out.size()));
}

}  // namespace luno
