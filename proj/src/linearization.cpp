#include "luno/linearization.hpp"

#include <stdexcept>

namespace luno {

Eigen::VectorXd theta_last(const FnoModel& model) {
  const ThetaLayout lay = ThetaLayout::of(model.config);
  const auto& b = model.last_block();
  const int d = lay.width;
  Eigen::VectorXd t(lay.size());
  for (int m = 0; m < lay.modes; ++m)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        t(lay.re(m, i, j)) = b.r(m, i, j, d).real();
        t(lay.im(m, i, j)) = b.r(m, i, j, d).imag();
      }
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) t(lay.w(i, j)) = b.weight(i, j);
  return t;
}

void set_theta_last(FnoModel& model, const Eigen::VectorXd& theta) {
  const ThetaLayout lay = ThetaLayout::of(model.config);
  if (static_cast<std::size_t>(theta.size()) != lay.size()) throw std::invalid_argument("theta_last: size mismatch");
  auto& b = model.last_block();
  const int d = lay.width;
  for (int m = 0; m < lay.modes; ++m)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) b.r(m, i, j, d) = {theta(lay.re(m, i, j)), theta(lay.im(m, i, j))};
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) b.weight(i, j) = theta(lay.w(i, j));
}

Eigen::MatrixXd projection_jacobian(const FnoModel& model, const Eigen::VectorXd& z) {
  const Activation act = model.config.activation;
  const Eigen::VectorXd u = z.unaryExpr([act](double t) { return activate(act, t); });
  const Eigen::VectorXd a = model.proj_in.weight * u + model.proj_in.bias;
  const Eigen::VectorXd da = a.unaryExpr([act](double t) { return activate_derivative(act, t); });
  const Eigen::VectorXd dz = z.unaryExpr([act](double t) { return activate_derivative(act, t); });
  return model.proj_out.weight * da.asDiagonal() * model.proj_in.weight * dz.asDiagonal();
}

Eigen::VectorXd project_point(const FnoModel& model, const Eigen::VectorXd& z) {
  const Activation act = model.config.activation;
  const Eigen::VectorXd u = z.unaryExpr([act](double t) { return activate(act, t); });
  const Eigen::VectorXd a = (model.proj_in.weight * u + model.proj_in.bias).unaryExpr([act](double t) {
    return activate(act, t);
  });
  return model.proj_out.weight * a + model.proj_out.bias;
}

LastBlockLinearization::LastBlockLinearization(const FnoModel& model, const Field& input)
    : LastBlockLinearization(std::make_shared<const FnoModel>(model), input) {}

LastBlockLinearization::LastBlockLinearization(std::shared_ptr<const FnoModel> model, const Field& input)
    : model_(std::move(model)), layout_(ThetaLayout::of(model_->config)), input_grid_(input.grid) {
  auto [out, hs] = forward_with_hidden(*model_, input);
  output_ = std::move(out);
  hidden_ = std::move(hs);
  modes_ = retained_modes(model_->config, hidden_.grid);
  theta_ = theta_last(*model_);
  v_spec_ = rfft(hidden_.last_input());

  const Field& z = hidden_.last_pre();
  const int d = layout_.width;
  jq_grid_.resize(input_grid_.points());
  Eigen::VectorXd zp(d);
  for (int p = 0; p < input_grid_.points(); ++p) {
    const int q = network_index(p);
    for (int i = 0; i < d; ++i) zp(i) = z.at(i, q);
    jq_grid_[p] = projection_jacobian(*model_, zp);
  }
}

void LastBlockLinearization::release_intermediates() {
  Field v = std::move(hidden_.block_inputs.back());
  Field z = std::move(hidden_.block_pre.back());
  hidden_.block_inputs.assign(1, std::move(v));
  hidden_.block_pre.assign(1, std::move(z));
  hidden_.input = {};
  hidden_.lift_pre = {};
  hidden_.last_output = {};
  hidden_.proj_pre = {};
  hidden_.output = {};
}

int LastBlockLinearization::network_index(int p) const {
  if (input_grid_.dims == 1) return p;
  const int n1 = input_grid_.n[1];
  return (p / n1) * hidden_.grid.n[1] + p % n1;
}

Eigen::VectorXd LastBlockLinearization::features(const Point& x) const {
  const Grid& g = hidden_.grid;
  const int d = layout_.width, nm = modes_.size();
  Eigen::VectorXd f(layout_.feature_size());
  const double inv_n = 1.0 / g.points();
  for (int m = 0; m < nm; ++m) {
    const Complex e = bin_basis(g, modes_.bins[m], x) * (modes_.weights[m] * inv_n);
    for (int j = 0; j < d; ++j) {
      const Complex c = hidden_.last_spectrum[m * d + j] * e;
      f(m * d + j) = c.real();
      f(nm * d + m * d + j) = -c.imag();
    }
  }
  const std::vector<double> psi = evaluate_spectrum(v_spec_, std::span<const Point>(&x, 1));
  for (int j = 0; j < d; ++j) f(2 * nm * d + j) = psi[j];
  return f;
}

std::vector<double> LastBlockLinearization::feature_sqnorm(std::span<const Point> points) const {
  const Grid& g = hidden_.grid;
  const int d = layout_.width, nm = modes_.size();
  std::vector<double> hnorm(nm, 0.0);
  for (int m = 0; m < nm; ++m)
    for (int j = 0; j < d; ++j) hnorm[m] += std::norm(hidden_.last_spectrum[m * d + j]);
  const double inv_n = 1.0 / g.points();
  const std::vector<double> psi = evaluate_spectrum(v_spec_, points);
  const std::size_t np = points.size();
  std::vector<double> out(np, 0.0);
  for (std::size_t p = 0; p < np; ++p) {
    double s = 0.0;
    for (int m = 0; m < nm; ++m) {
      const double w = modes_.weights[m] * inv_n;
      s += w * w * std::norm(bin_basis(g, modes_.bins[m], points[p])) * hnorm[m];
    }
    for (int j = 0; j < d; ++j) s += psi[j * np + p] * psi[j * np + p];
    out[p] = s;
  }
  return out;
}

std::vector<double> LastBlockLinearization::feature_sqnorm_grid() const {
  return feature_sqnorm(input_grid_.coordinates());
}

Eigen::VectorXd LastBlockLinearization::z_from_features(const Eigen::VectorXd& theta, const Eigen::VectorXd& f) const {
  const int d = layout_.width, nm = layout_.modes;
  const std::size_t dd = static_cast<std::size_t>(d) * d;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
  // Each block of theta is row-major (i, j); map it as a d x d matrix.
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  for (int m = 0; m < nm; ++m) {
    Eigen::Map<const RowMat> re(theta.data() + m * dd, d, d);
    Eigen::Map<const RowMat> im(theta.data() + (nm + m) * dd, d, d);
    z.noalias() += re * f.segment(m * d, d) + im * f.segment((nm + m) * d, d);
  }
  Eigen::Map<const RowMat> w(theta.data() + 2 * nm * dd, d, d);
  z.noalias() += w * f.segment(2 * nm * d, d);
  return z;
}

std::vector<double> LastBlockLinearization::reconstruct_z(const Eigen::VectorXd& theta,
                                                          std::span<const Point> points, bool with_bias) const {
  if (static_cast<std::size_t>(theta.size()) != layout_.size())
    throw std::invalid_argument("reconstruct_z: theta size mismatch");
  check_points(input_grid_, points);
  const int d = layout_.width;
  const std::size_t np = points.size();
  std::vector<double> out(d * np);
  for (std::size_t p = 0; p < np; ++p) {
    Eigen::VectorXd z = z_from_features(theta, features(points[p]));
    if (with_bias) z += model_->last_block().bias;
    for (int i = 0; i < d; ++i) out[i * np + p] = z(i);
  }
  return out;
}

Field LastBlockLinearization::reconstruct_z_grid(const Eigen::VectorXd& theta, bool with_bias) const {
  if (static_cast<std::size_t>(theta.size()) != layout_.size())
    throw std::invalid_argument("reconstruct_z: theta size mismatch");
  const Grid& g = hidden_.grid;
  const int d = layout_.width, nm = modes_.size();
  const Field& v = hidden_.last_input();
  Field z(g, d);
  std::vector<Complex> buf(g.bins());
  for (int i = 0; i < d; ++i) {
    std::fill(buf.begin(), buf.end(), Complex{});
    for (int m = 0; m < nm; ++m) {
      Complex acc{};
      for (int j = 0; j < d; ++j)
        acc += Complex(theta(layout_.re(m, i, j)), theta(layout_.im(m, i, j))) * hidden_.last_spectrum[m * d + j];
      buf[modes_.bins[m]] = acc;
    }
    auto zi = z.channel(i);
    irfft(g, buf, zi);
    for (int j = 0; j < d; ++j) {
      const double wij = theta(layout_.w(i, j));
      if (wij == 0.0) continue;
      auto vj = v.channel(j);
      for (int p = 0; p < g.points(); ++p) zi[p] += wij * vj[p];
    }
    if (with_bias)
      for (double& x : zi) x += model_->last_block().bias(i);
  }
  return z;
}

std::vector<double> LastBlockLinearization::mean_z(std::span<const Point> points) const {
  return reconstruct_z(theta_, points, true);
}

std::vector<double> LastBlockLinearization::mean(std::span<const Point> points) const {
  const int d = layout_.width, nout = out_channels();
  const std::size_t np = points.size();
  const std::vector<double> z = mean_z(points);
  std::vector<double> out(nout * np);
  Eigen::VectorXd zp(d);
  for (std::size_t p = 0; p < np; ++p) {
    for (int i = 0; i < d; ++i) zp(i) = z[i * np + p];
    const Eigen::VectorXd y = project_point(*model_, zp);
    for (int o = 0; o < nout; ++o) out[o * np + p] = y(o);
  }
  return out;
}

Field LastBlockLinearization::jvp_grid(const Eigen::VectorXd& dtheta) const {
  const Field dz = reconstruct_z_grid(dtheta);
  const int d = layout_.width, nout = out_channels();
  Field out(input_grid_, nout);
  Eigen::VectorXd zp(d);
  for (int p = 0; p < input_grid_.points(); ++p) {
    const int q = network_index(p);
    for (int i = 0; i < d; ++i) zp(i) = dz.at(i, q);
    const Eigen::VectorXd y = jq_grid_[p] * zp;
    for (int o = 0; o < nout; ++o) out.at(o, p) = y(o);
  }
  return out;
}

std::vector<double> LastBlockLinearization::jvp(const Eigen::VectorXd& dtheta, std::span<const Point> points) const {
  if (static_cast<std::size_t>(dtheta.size()) != layout_.size()) throw std::invalid_argument("jvp: theta size mismatch");
  check_points(input_grid_, points);
  const int nout = out_channels();
  const std::size_t np = points.size();
  std::vector<double> out(nout * np);
  for (std::size_t p = 0; p < np; ++p) {
    const Eigen::VectorXd f = features(points[p]);
    const Eigen::VectorXd mz = z_from_features(theta_, f) + model_->last_block().bias;
    const Eigen::VectorXd y = projection_jacobian(*model_, mz) * z_from_features(dtheta, f);
    for (int o = 0; o < nout; ++o) out[o * np + p] = y(o);
  }
  return out;
}

Eigen::VectorXd LastBlockLinearization::vjp_grid(const Field& cotangent) const {
  if (!(cotangent.grid == input_grid_) || cotangent.channels != out_channels())
    throw std::invalid_argument("vjp: cotangent shape mismatch");
  const Grid& g = hidden_.grid;
  const int d = layout_.width, nm = modes_.size(), nout = out_channels();
  // Pull the cotangent back through J_Q~ onto the network grid.
  Field gz(g, d);
  Eigen::VectorXd cp(nout);
  for (int p = 0; p < input_grid_.points(); ++p) {
    for (int o = 0; o < nout; ++o) cp(o) = cotangent.at(o, p);
    const Eigen::VectorXd y = jq_grid_[p].transpose() * cp;
    const int q = network_index(p);
    for (int i = 0; i < d; ++i) gz.at(i, q) = y(i);
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(layout_.size());
  const Field& v = hidden_.last_input();
  const double inv_n = 1.0 / g.points();
  std::vector<Complex> buf(g.bins());
  for (int i = 0; i < d; ++i) {
    auto gi = gz.channel(i);
    // sum_p g(p) E_m(x_p) = conj(rfft(g)[bin_m]) for real g.
    rfft(g, gi, buf);
    for (int m = 0; m < nm; ++m) {
      const Complex s = std::conj(buf[modes_.bins[m]]) * (modes_.weights[m] * inv_n);
      for (int j = 0; j < d; ++j) {
        const Complex c = hidden_.last_spectrum[m * d + j] * s;
        out(layout_.re(m, i, j)) = c.real();
        out(layout_.im(m, i, j)) = -c.imag();
      }
    }
    for (int j = 0; j < d; ++j) {
      auto vj = v.channel(j);
      double acc = 0.0;
      for (int p = 0; p < g.points(); ++p) acc += gi[p] * vj[p];
      out(layout_.w(i, j)) = acc;
    }
  }
  return out;
}

void LastBlockLinearization::scatter_row(const Eigen::MatrixXd& jq, const Eigen::VectorXd& f, int o,
                                         Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) const {
  const int d = layout_.width, nm = layout_.modes;
  for (int i = 0; i < d; ++i) {
    const double a = jq(o, i);
    for (int m = 0; m < nm; ++m)
      for (int j = 0; j < d; ++j) {
        row(layout_.re(m, i, j)) = a * f(m * d + j);
        row(layout_.im(m, i, j)) = a * f((nm + m) * d + j);
      }
    for (int j = 0; j < d; ++j) row(layout_.w(i, j)) = a * f(2 * nm * d + j);
  }
}

Eigen::MatrixXd LastBlockLinearization::jacobian_rows(std::span<const Point> points) const {
  check_points(input_grid_, points);
  const int nout = out_channels();
  const int np = static_cast<int>(points.size());
  Eigen::MatrixXd rows(nout * np, layout_.size());
  for (int p = 0; p < np; ++p) {
    const Eigen::VectorXd f = features(points[p]);
    const Eigen::VectorXd mz = z_from_features(theta_, f) + model_->last_block().bias;
    const Eigen::MatrixXd jq = projection_jacobian(*model_, mz);
    for (int o = 0; o < nout; ++o) scatter_row(jq, f, o, rows.row(o * np + p));
  }
  return rows;
}

Eigen::MatrixXd LastBlockLinearization::jacobian_grid() const {
  const Grid& g = hidden_.grid;
  const int d = layout_.width, nm = modes_.size(), nout = out_channels();
  const int np = input_grid_.points();
  const Field& v = hidden_.last_input();
  const double inv_n = 1.0 / g.points();
  Eigen::MatrixXd rows(nout * np, layout_.size());
  Eigen::VectorXd f(layout_.feature_size());
  for (int p = 0; p < np; ++p) {
    const int q = network_index(p);
    const Point x = g.coordinate(q);
    for (int m = 0; m < nm; ++m) {
      const Complex e = bin_basis(g, modes_.bins[m], x) * (modes_.weights[m] * inv_n);
      for (int j = 0; j < d; ++j) {
        const Complex c = hidden_.last_spectrum[m * d + j] * e;
        f(m * d + j) = c.real();
        f((nm + m) * d + j) = -c.imag();
      }
    }
    for (int j = 0; j < d; ++j) f(2 * nm * d + j) = v.at(j, q);
    for (int o = 0; o < nout; ++o) scatter_row(jq_grid_[p], f, o, rows.row(o * np + p));
  }
  return rows;
}

}  // namespace luno
