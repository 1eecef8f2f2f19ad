#include "doctest.h"

#include <cmath>

#include "luno/luno.hpp"
#include "luno/rng.hpp"

using namespace luno;

namespace {

FnoConfig tiny_config() {
  FnoConfig c;
  c.in_channels = 1;
  c.out_channels = 2;
  c.hidden_channels = 3;
  c.blocks = 2;
  c.modes = 4;
  c.lifting_width = 6;
  c.projection_width = 6;
  return c;
}

FnoModel random_model(const FnoConfig& c, std::uint64_t seed) {
  FnoModel m = init(c, seed);
  auto theta = flatten(m);
  Rng rng(seed + 1);
  for (double& t : theta) t += 0.1 * rng.normal();
  unflatten(m, theta);
  return m;
}

Field random_field(const Grid& g, int channels, std::uint64_t seed) {
  Rng rng(seed);
  Field f(g, channels);
  for (double& v : f.values) v = rng.normal();
  return f;
}

std::vector<Point> random_points(double length, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Point> pts(n);
  for (auto& p : pts) p = {rng.uniform(0.0, length), 0.0};
  return pts;
}

// Dense Jacobian of the grid output in theta_last from fourth-order central
// differences of the full nonlinear forward pass.
Eigen::MatrixXd fd_jacobian(const FnoModel& m, const Field& in) {
  const Eigen::VectorXd t0 = theta_last(m);
  const double h = 1e-3;
  const Field y0 = forward(m, in);
  Eigen::MatrixXd j(y0.values.size(), t0.size());
  FnoModel mp = m;
  for (Eigen::Index k = 0; k < t0.size(); ++k) {
    auto eval = [&](double s) {
      Eigen::VectorXd t = t0;
      t(k) += s;
      set_theta_last(mp, t);
      return Eigen::Map<const Eigen::VectorXd>(forward(mp, in).values.data(), y0.values.size()).eval();
    };
    j.col(k) = (-eval(2 * h) + 8 * eval(h) - 8 * eval(-h) + eval(-2 * h)) / (12 * h);
  }
  return j;
}

}  // namespace

TEST_CASE("zero-covariance belief degenerates") {
  const FnoModel m = random_model(tiny_config(), 1);
  const Grid g = Grid::line(16, 1.0);
  const Field in = random_field(g, 1, 2);
  const PredictiveGp gp(m, WeightBelief::isotropic(theta_last(m), 0.0), in);
  CHECK(gp.mean_grid().values == forward(m, in).values);
  for (double s : gp.marginal_std_grid().values) CHECK(s == 0.0);
  for (double s : gp.marginal_std(random_points(1.0, 5, 3))) CHECK(s == 0.0);
  for (const auto& f : gp.sample_functions(3, 4)) CHECK(f.evaluate_grid().values == gp.mean_grid().values);
  CHECK(gp.sample_functions(0, 1).empty());
}

TEST_CASE("belief must match the model") {
  const FnoModel m = random_model(tiny_config(), 1);
  Eigen::VectorXd t = theta_last(m);
  t(0) += 1.0;
  CHECK_THROWS_AS(PredictiveGp(m, WeightBelief::isotropic(t, 1.0), random_field(Grid::line(16, 1.0), 1, 1)),
                  std::invalid_argument);
}

TEST_CASE("covariance equals J Sigma J^T from a finite-difference Jacobian") {
  const FnoModel m = random_model(tiny_config(), 5);
  const Grid g = Grid::line(16, 1.0);
  const Field in = random_field(g, 1, 6);
  const Eigen::MatrixXd j = fd_jacobian(m, in);
  const auto pts = g.coordinates();

  const PredictiveGp iso(m, WeightBelief::isotropic(theta_last(m), 1.0), in);
  const Eigen::MatrixXd k = iso.cov(pts, pts);
  const Eigen::MatrixXd ref = j * j.transpose();
  CHECK((k - ref).norm() < 1e-8 * ref.norm());

  Rng rng(7);
  Eigen::MatrixXd v(j.cols(), 6);
  for (auto& x : v.reshaped()) x = rng.normal();
  const auto la_belief = WeightBelief::low_rank_laplace(theta_last(m), v, 0.5, 20.0);
  const PredictiveGp la(m, la_belief, in);
  const Eigen::MatrixXd ref_la = j * la_belief.dense_covariance() * j.transpose();
  CHECK((la.cov(pts, pts) - ref_la).norm() < 1e-8 * ref_la.norm());
}

TEST_CASE("marginal std, grid and off-grid paths") {
  const FnoModel m = random_model(tiny_config(), 8);
  const Grid g = Grid::line(16, 1.0);
  const Field in = random_field(g, 1, 9);
  Rng rng(10);
  Eigen::MatrixXd v(theta_last(m).size(), 5);
  for (auto& x : v.reshaped()) x = rng.normal();
  for (const auto& belief :
       {WeightBelief::isotropic(theta_last(m), 0.3), WeightBelief::low_rank_laplace(theta_last(m), v, 0.8, 30.0)}) {
    const PredictiveGp gp(m, belief, in);
    const auto pts = g.coordinates();
    const Eigen::MatrixXd k = gp.cov(pts, pts);
    const Field sg = gp.marginal_std_grid();
    const auto so = gp.marginal_std(pts);
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
      CHECK(std::abs(so[i] - std::sqrt(k(i, i))) < 1e-12);
      CHECK(std::abs(sg.values[i] * sg.values[i] - k(i, i)) < 1e-9 * std::max(1.0, k(i, i)));
    }
    const auto off = random_points(1.0, 7, 11);
    const Eigen::MatrixXd ko = gp.cov(off, off);
    const auto s = gp.marginal_std(off);
    for (int i = 0; i < 14; ++i) CHECK(std::abs(s[i] - std::sqrt(ko(i, i))) < 1e-12);
  }
  const PredictiveGp a(m, WeightBelief::isotropic(theta_last(m), 1.0), in);
  const PredictiveGp b(m, WeightBelief::isotropic(theta_last(m), 9.0), in);
  const auto sa = a.marginal_std_grid(), sb = b.marginal_std_grid();
  for (std::size_t i = 0; i < sa.values.size(); ++i) CHECK(sb.values[i] == doctest::Approx(3.0 * sa.values[i]));
}

TEST_CASE("covariance is symmetric PSD on random point sets") {
  const FnoModel m = random_model(tiny_config(), 12);
  const Field in = random_field(Grid::line(16, 1.0), 1, 13);
  Rng rng(14);
  Eigen::MatrixXd v(theta_last(m).size(), 10);
  for (auto& x : v.reshaped()) x = rng.normal();
  const PredictiveGp gp(m, WeightBelief::low_rank_laplace(theta_last(m), v, 1.0, 50.0), in);
  for (int trial = 0; trial < 3; ++trial) {
    auto pts = random_points(1.0, 32, 20 + trial);
    pts[5] = pts[2];  // duplicated point
    const Eigen::MatrixXd k = gp.cov(pts, pts);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() < 1e-12 * k.cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
    CHECK(es.eigenvalues().minCoeff() > -1e-8);
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += 1e-10;
    CHECK(Eigen::LLT<Eigen::MatrixXd>(kj).info() == Eigen::Success);
    CHECK(k.row(2).isApprox(k.row(5)));
  }
}

TEST_CASE("currying: function-valued and augmented-index GPs agree") {
  const FnoModel m = random_model(tiny_config(), 15);
  const Grid g = Grid::line(16, 1.0);
  Rng rng(16);
  Eigen::MatrixXd v(theta_last(m).size(), 4);
  for (auto& x : v.reshaped()) x = rng.normal();
  const auto belief = WeightBelief::low_rank_laplace(theta_last(m), v, 0.5, 10.0);
  const AugmentedIndexGp aug(m, belief);
  const Field a1 = random_field(g, 1, 17), a2 = random_field(g, 1, 18);
  const PredictiveGp gp1(m, belief, a1), gp2(m, belief, a2);
  const auto pts = g.coordinates();
  const Eigen::MatrixXd k12 = cross_cov(gp1, pts, gp2, pts);
  const auto std1 = gp1.marginal_std_grid();
  for (int t = 0; t < 10; ++t) {
    const int p = static_cast<int>(rng.below(16)), q = static_cast<int>(rng.below(16));
    const int i = static_cast<int>(rng.below(2)), j = static_cast<int>(rng.below(2));
    CHECK(std::abs(aug.mean(a1, p, i) - gp1.mean_grid().at(i, p)) < 1e-12);
    const double var = aug.cov(a1, p, i, a1, p, i);
    CHECK(std::abs(var - std1.at(i, p) * std1.at(i, p)) < 1e-12 * std::max(1.0, var));
    const double c = aug.cov(a1, p, i, a2, q, j);
    CHECK(std::abs(c - k12(i * 16 + p, j * 16 + q)) < 1e-12 * std::max(1.0, std::abs(c)));
  }
}

TEST_CASE("function samples") {
  const FnoModel m = random_model(tiny_config(), 19);
  const Grid g = Grid::line(16, 2.0);
  const Field in = random_field(g, 1, 20);
  const PredictiveGp gp(m, WeightBelief::isotropic(theta_last(m), 0.04), in);

  const auto s = gp.sample_functions(4, 21);
  const auto s2 = gp.sample_functions(4, 21);
  CHECK(s[3].evaluate_grid().values == s2[3].evaluate_grid().values);

  const Grid fine = Grid::line(32, 2.0);
  for (const auto& f : s) {
    const Field coarse = f.evaluate_grid();
    const auto refined = f.evaluate(fine.coordinates());
    for (int ch = 0; ch < 2; ++ch)
      for (int p = 0; p < 16; ++p) CHECK(std::abs(refined[ch * 32 + 2 * p] - coarse.at(ch, p)) < 1e-10);
  }

  const int n = 10000;
  const auto many = gp.sample_functions(n, 22);
  const Field sd = gp.marginal_std_grid();
  std::vector<double> sum(32, 0.0), sq(32, 0.0);
  for (const auto& f : many) {
    const Field y = f.evaluate_grid();
    for (int i = 0; i < 32; ++i) {
      const double r = y.values[i] - gp.mean_grid().values[i];
      sum[i] += r;
      sq[i] += r * r;
    }
  }
  for (int i = 0; i < 32; ++i) {
    const double emp = std::sqrt((sq[i] - sum[i] * sum[i] / n) / (n - 1));
    CHECK(std::abs(emp - sd.values[i]) < 5.0 * sd.values[i] / std::sqrt(2.0 * n));
  }
}

TEST_CASE("feature-span residual") {
  const FnoModel m = random_model(tiny_config(), 23);
  const Grid g = Grid::line(16, 1.0);
  const LastBlockLinearization lin(m, random_field(g, 1, 24));
  Rng rng(25);
  Eigen::VectorXd dir(lin.parameter_count());
  for (auto& x : dir) x = rng.normal();
  const Field inside = lin.jvp_grid(dir);
  const Field r = feature_span_residual(lin, inside);
  double norm_in = 0.0, norm_r = 0.0;
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    norm_in = std::max(norm_in, std::abs(inside.values[i]));
    norm_r = std::max(norm_r, std::abs(r.values[i]));
  }
  CHECK(norm_r < 1e-8 * norm_in);
  const Field generic = random_field(g, 2, 26);
  const Field once = feature_span_residual(lin, generic);
  const Field twice = feature_span_residual(lin, once);
  for (std::size_t i = 0; i < once.values.size(); ++i) CHECK(std::abs(once.values[i] - twice.values[i]) < 1e-10);
}
