#include "luno/belief.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "luno/rng.hpp"

namespace luno {

std::string to_string(BeliefKind k) { return k == BeliefKind::isotropic ? "isotropic" : "low_rank_laplace"; }

BeliefKind parse_belief_kind(const std::string& name) {
  if (name == "isotropic" || name == "iso") return BeliefKind::isotropic;
  if (name == "low_rank_laplace" || name == "la") return BeliefKind::low_rank_laplace;
  throw std::invalid_argument("unknown belief type: " + name);
}

WeightBelief WeightBelief::isotropic(Eigen::VectorXd mean, double variance) {
  if (!(variance >= 0.0) || !std::isfinite(variance)) throw std::invalid_argument("isotropic belief: bad variance");
  WeightBelief b;
  b.kind_ = BeliefKind::isotropic;
  b.mean_ = std::move(mean);
  b.variance_ = variance;
  return b;
}

WeightBelief WeightBelief::low_rank_laplace(Eigen::VectorXd mean, Eigen::MatrixXd factor, double prior_precision,
                                            double n_data) {
  if (!(prior_precision > 0.0) || !std::isfinite(prior_precision))
    throw std::invalid_argument("Laplace belief: prior precision must be positive");
  if (!(n_data > 0.0)) throw std::invalid_argument("Laplace belief: n_data must be positive");
  if (factor.rows() != mean.size()) throw std::invalid_argument("Laplace belief: factor has wrong row count");
  WeightBelief b;
  b.kind_ = BeliefKind::low_rank_laplace;
  b.mean_ = std::move(mean);
  b.factor_ = std::move(factor);
  b.prior_precision_ = prior_precision;
  b.n_data_ = n_data;
  if (b.factor_.cols() > 0) {
    // V^T V = U diag(s^2) U^T, so V U diag(1/s) is an orthonormal basis of range(V).
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b.factor_.transpose() * b.factor_);
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    const double cutoff = 1e-14 * std::max(lam.maxCoeff(), 0.0);
    std::vector<int> keep;
    for (int i = static_cast<int>(lam.size()) - 1; i >= 0; --i)
      if (lam(i) > cutoff && lam(i) > 0.0) keep.push_back(i);
    b.basis_.resize(b.factor_.rows(), keep.size());
    b.eigenvalues_.resize(keep.size());
    for (std::size_t c = 0; c < keep.size(); ++c) {
      const int i = keep[c];
      b.eigenvalues_(c) = lam(i);
      b.basis_.col(c) = b.factor_ * es.eigenvectors().col(i) / std::sqrt(lam(i));
    }
  }
  return b;
}

WeightBelief WeightBelief::with_scale(double scale) const {
  if (kind_ == BeliefKind::isotropic) return isotropic(mean_, scale);
  WeightBelief b = *this;
  if (!(scale > 0.0)) throw std::invalid_argument("Laplace belief: prior precision must be positive");
  b.prior_precision_ = scale;
  return b;
}

Eigen::VectorXd WeightBelief::cov_matvec(const Eigen::VectorXd& x) const {
  if (static_cast<std::size_t>(x.size()) != dim()) throw std::invalid_argument("cov_matvec: dimension mismatch");
  if (kind_ == BeliefKind::isotropic) return variance_ * x;
  const double s = prior_precision_, n = n_data_;
  if (factor_.cols() == 0) return x / s;
  // (n V V^T + s I)^{-1} x = x/s - (n/s) V (s I + n V^T V)^{-1} V^T x
  Eigen::MatrixXd inner = n * factor_.transpose() * factor_;
  inner.diagonal().array() += s;
  const Eigen::VectorXd vtx = factor_.transpose() * x;
  return x / s - (n / s) * (factor_ * inner.llt().solve(vtx));
}

Eigen::MatrixXd WeightBelief::dense_covariance() const {
  const auto p = static_cast<Eigen::Index>(dim());
  if (kind_ == BeliefKind::isotropic) return variance_ * Eigen::MatrixXd::Identity(p, p);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(p, p) / prior_precision_;
  for (Eigen::Index c = 0; c < basis_.cols(); ++c) {
    const double shrink = 1.0 / (n_data_ * eigenvalues_(c) + prior_precision_) - 1.0 / prior_precision_;
    cov.noalias() += shrink * basis_.col(c) * basis_.col(c).transpose();
  }
  return cov;
}

Eigen::MatrixXd WeightBelief::sample_theta(int n_samples, std::uint64_t seed) const {
  if (n_samples < 0) throw std::invalid_argument("sample_theta: negative sample count");
  const auto p = static_cast<Eigen::Index>(dim());
  Eigen::MatrixXd out(p, n_samples);
  Eigen::VectorXd eps(p);
  for (int s = 0; s < n_samples; ++s) {
    Rng rng(seed, {0x62656c696566ULL, static_cast<std::uint64_t>(s)});
    for (auto& e : eps) e = rng.normal();
    if (kind_ == BeliefKind::isotropic) {
      out.col(s) = std::sqrt(variance_) * eps;
    } else {
      // A = (1/sqrt(s)) (I - Q Q^T) + Q diag(1/sqrt(n lambda + s)) Q^T, A A^T = Sigma.
      const double is = 1.0 / std::sqrt(prior_precision_);
      Eigen::VectorXd col = is * eps;
      if (basis_.cols() > 0) {
        Eigen::VectorXd qe = basis_.transpose() * eps;
        for (Eigen::Index c = 0; c < qe.size(); ++c)
          qe(c) *= 1.0 / std::sqrt(n_data_ * eigenvalues_(c) + prior_precision_) - is;
        col.noalias() += basis_ * qe;
      }
      out.col(s) = col;
    }
  }
  return out;
}

void save_belief(const WeightBelief& belief, const std::string& path, const nlohmann::json& metadata) {
  nlohmann::json manifest{{"format", "luno-belief"},
                          {"type", to_string(belief.kind())},
                          {"dim", belief.dim()},
                          {"scale", belief.scale()},
                          {"n_data", belief.n_data()},
                          {"rank", belief.factor().cols()},
                          {"metadata", metadata}};
  std::ofstream bin(path + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open for writing: " + path + ".bin");
  bin.write(reinterpret_cast<const char*>(belief.mean().data()),
            static_cast<std::streamsize>(belief.mean().size() * sizeof(double)));
  bin.write(reinterpret_cast<const char*>(belief.factor().data()),
            static_cast<std::streamsize>(belief.factor().size() * sizeof(double)));
  if (!bin) throw std::runtime_error("write failed: " + path + ".bin");
  std::ofstream js(path + ".json");
  js << manifest.dump(2) << '\n';
  if (!js) throw std::runtime_error("write failed: " + path + ".json");
}

WeightBelief load_belief(const std::string& path, nlohmann::json* metadata) {
  std::ifstream js(path + ".json");
  if (!js) throw std::runtime_error("missing belief: " + path + ".json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt belief manifest: " + std::string(e.what()));
  }
  if (m.value("format", "") != "luno-belief") throw std::runtime_error("not a belief file: " + path);
  const auto p = m.at("dim").get<Eigen::Index>();
  const auto r = m.at("rank").get<Eigen::Index>();
  Eigen::VectorXd mean(p);
  Eigen::MatrixXd factor(p, r);
  std::ifstream bin(path + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("missing belief buffer: " + path + ".bin");
  bin.read(reinterpret_cast<char*>(mean.data()), static_cast<std::streamsize>(p * sizeof(double)));
  bin.read(reinterpret_cast<char*>(factor.data()), static_cast<std::streamsize>(p * r * sizeof(double)));
  if (!bin) throw std::runtime_error("truncated belief buffer: " + path + ".bin");
  if (metadata) *metadata = m.value("metadata", nlohmann::json::object());
  const BeliefKind kind = parse_belief_kind(m.at("type"));
  if (kind == BeliefKind::isotropic) return WeightBelief::isotropic(std::move(mean), m.at("scale"));
  return WeightBelief::low_rank_laplace(std::move(mean), std::move(factor), m.at("scale"), m.at("n_data"));
}

Eigen::VectorXd ggn_matvec(const std::vector<LastBlockLinearization>& pairs, double noise_var,
                           const Eigen::VectorXd& x) {
  if (pairs.empty()) throw std::invalid_argument("ggn: no data");
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
  for (const auto& lin : pairs) y += lin.vjp_grid(lin.jvp_grid(x));
  return y / (noise_var * static_cast<double>(pairs.size()));
}

namespace {

GgnResult ggn_gram(const std::vector<LastBlockLinearization>& pairs, const GgnOptions& opt, Eigen::Index p) {
  Eigen::Index rows = 0;
  for (const auto& lin : pairs) rows += lin.out_channels() * lin.grid().points();
  Eigen::MatrixXd jac(rows, p);
  Eigen::Index r0 = 0;
  for (const auto& lin : pairs) {
    Eigen::MatrixXd j = lin.jacobian_grid();
    jac.middleRows(r0, j.rows()) = j;
    r0 += j.rows();
  }
  const double scale = 1.0 / (opt.noise_var * static_cast<double>(pairs.size()));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(scale * jac * jac.transpose());
  GgnResult res;
  res.method = "gram";
  res.factor = Eigen::MatrixXd::Zero(p, opt.rank);
  res.eigenvalues = Eigen::VectorXd::Zero(opt.rank);
  const Eigen::Index n = es.eigenvalues().size();
  for (int c = 0; c < opt.rank && c < n; ++c) {
    const double lam = es.eigenvalues()(n - 1 - c);
    if (lam <= 0.0) break;
    res.eigenvalues(c) = lam;
    // H = s J^T J; with J J^T u = (lam/s) u, the column sqrt(s) J^T u has
    // norm sqrt(lam) and lies along the matching eigenvector of H.
    res.factor.col(c) = std::sqrt(scale) * (jac.transpose() * es.eigenvectors().col(n - 1 - c));
  }
  return res;
}

GgnResult ggn_lanczos(const std::vector<LastBlockLinearization>& pairs, const GgnOptions& opt, Eigen::Index p) {
  const int kmax = static_cast<int>(std::min<Eigen::Index>(opt.max_iterations > 0 ? opt.max_iterations : 10 * opt.rank, p));
  Eigen::MatrixXd q(p, kmax);
  std::vector<double> alpha, beta;
  Rng rng(opt.seed, {0x6c616e637a6f73ULL});
  Eigen::VectorXd v(p);
  for (auto& x : v) x = rng.normal();
  q.col(0) = v / v.norm();

  GgnResult res;
  res.method = "lanczos";
  res.converged = false;
  Eigen::VectorXd ritz;
  Eigen::MatrixXd svec;
  int k = 0;
  double norm_est = 0.0;
  bool exhausted = false;
  auto solve_tridiagonal = [&](int m) {
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      t(i, i) = alpha[i];
      if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    ritz = es.eigenvalues().reverse();
    svec = es.eigenvectors().rowwise().reverse();
  };
  while (k < kmax) {
    Eigen::VectorXd w = ggn_matvec(pairs, opt.noise_var, q.col(k));
    const double a = q.col(k).dot(w);
    alpha.push_back(a);
    // Full reorthogonalization, applied twice for stability.
    for (int pass = 0; pass < 2; ++pass) w -= q.leftCols(k + 1) * (q.leftCols(k + 1).transpose() * w);
    const double b = w.norm();
    norm_est = std::max(norm_est, std::abs(a) + b);
    ++k;
    if (b <= 1e-13 * std::max(norm_est, 1e-300)) {
      exhausted = true;  // invariant subspace: Ritz pairs are exact
      break;
    }
    beta.push_back(b);
    if (k < kmax) q.col(k) = w / b;
    if (k >= opt.rank && (k % 5 == 0 || k == kmax)) {
      solve_tridiagonal(k);
      double worst = 0.0;
      for (int i = 0; i < opt.rank; ++i) worst = std::max(worst, b * std::abs(svec(k - 1, i)));
      res.residual = worst / std::max(ritz(0), 1e-300);
      if (res.residual <= opt.tolerance) {
        res.converged = true;
        break;
      }
    }
  }
  solve_tridiagonal(k);
  if (exhausted) {
    res.converged = true;
    res.residual = 0.0;
  } else if (!res.converged) {
    double worst = 0.0;
    const int kk = std::min(opt.rank, k);
    for (int i = 0; i < kk; ++i) worst = std::max(worst, beta.empty() ? 0.0 : beta.back() * std::abs(svec(k - 1, i)));
    res.residual = worst / std::max(ritz(0), 1e-300);
    res.converged = res.residual <= opt.tolerance;
  }
  res.iterations = k;
  res.factor = Eigen::MatrixXd::Zero(p, opt.rank);
  res.eigenvalues = Eigen::VectorXd::Zero(opt.rank);
  for (int c = 0; c < opt.rank && c < k; ++c) {
    const double lam = ritz(c);
    if (lam <= 0.0) break;
    res.eigenvalues(c) = lam;
    res.factor.col(c) = std::sqrt(lam) * (q.leftCols(k) * svec.col(c));
  }
  return res;
}

}  // namespace

GgnResult ggn_lowrank(const std::vector<LastBlockLinearization>& pairs, const GgnOptions& options) {
  if (pairs.empty()) throw std::invalid_argument("ggn: no data");
  if (!(options.noise_var > 0.0)) throw std::invalid_argument("ggn: noise variance must be positive");
  const auto p = static_cast<Eigen::Index>(pairs.front().parameter_count());
  Eigen::Index outputs = 0;
  for (const auto& lin : pairs) {
    if (static_cast<Eigen::Index>(lin.parameter_count()) != p) throw std::invalid_argument("ggn: mixed models");
    outputs += lin.out_channels() * lin.grid().points();
  }
  if (options.rank < 1 || options.rank > std::min(p, outputs))
    throw std::invalid_argument("ggn: rank " + std::to_string(options.rank) + " exceeds min(P, outputs) = " +
                                std::to_string(std::min(p, outputs)));
  EigenMethod method = options.method;
  if (method == EigenMethod::automatic) method = outputs <= p ? EigenMethod::gram : EigenMethod::lanczos;
  return method == EigenMethod::gram ? ggn_gram(pairs, options, p) : ggn_lanczos(pairs, options, p);
}

}  // namespace luno
