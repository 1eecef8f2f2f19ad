#include "luno/pde.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "luno/rng.hpp"

namespace luno {

namespace {

constexpr double kBlowUp = 1e6;

void check_bounded(std::span<const double> u, const char* who) {
  for (double v : u)
    if (!std::isfinite(v) || std::abs(v) > kBlowUp) throw std::runtime_error(std::string(who) + ": solution blew up");
}

// Exponential time differencing RK4 for u_t = L u + N(u) with diagonal L,
// coefficients from the contour-integral evaluation of the phi functions.
class Etdrk4 {
 public:
  Etdrk4(const Scenario1d& s, double h) : grid_(Grid::line(s.n, s.length)), nonlinear_(s.equation != Equation::hyper_diffusion) {
    const int bins = grid_.bins();
    e_.resize(bins), e2_.resize(bins), q_.resize(bins), f1_.resize(bins), f2_.resize(bins), f3_.resize(bins);
    g_.assign(bins, Complex{});
    const int contour = 32;
    for (int k = 0; k < bins; ++k) {
      const double w = 2.0 * std::numbers::pi * k / s.length;
      double lin = 0.0;
      switch (s.equation) {
        case Equation::burgers: lin = -s.coefficient * w * w; break;
        case Equation::hyper_diffusion: lin = -s.coefficient * w * w * w * w; break;
        case Equation::ks_conservative: lin = w * w - w * w * w * w; break;
      }
      const double hl = h * lin;
      e_[k] = std::exp(hl);
      e2_[k] = std::exp(hl / 2);
      Complex q{}, a{}, b{}, c{};
      for (int j = 1; j <= contour; ++j) {
        const Complex r = hl + std::exp(Complex(0.0, std::numbers::pi * (j - 0.5) / contour));
        const Complex er = std::exp(r);
        q += (std::exp(r / 2.0) - 1.0) / r;
        a += (-4.0 - r + er * (4.0 - 3.0 * r + r * r)) / (r * r * r);
        b += (2.0 + r + er * (r - 2.0)) / (r * r * r);
        c += (-4.0 - 3.0 * r - r * r + er * (4.0 - r)) / (r * r * r);
      }
      q_[k] = h * q.real() / contour;
      f1_[k] = h * a.real() / contour;
      f2_[k] = h * b.real() / contour;
      f3_[k] = h * c.real() / contour;
      // -(1/2) d/dx (u^2) with the 2/3 rule; the Nyquist derivative is zero.
      if (3 * k <= s.n && !is_nyquist(grid_, 0, k)) g_[k] = Complex(0.0, -0.5 * w);
    }
    u_.resize(grid_.points());
    sq_.resize(bins);
  }

  void step(std::vector<Complex>& v) {
    const std::size_t nb = v.size();
    if (!nonlinear_) {
      for (std::size_t k = 0; k < nb; ++k) v[k] *= e_[k];
      return;
    }
    nv_.resize(nb), na_.resize(nb), nb_.resize(nb), nc_.resize(nb), a_.resize(nb), b_.resize(nb), c_.resize(nb);
    eval(v, nv_);
    for (std::size_t k = 0; k < nb; ++k) a_[k] = e2_[k] * v[k] + q_[k] * nv_[k];
    eval(a_, na_);
    for (std::size_t k = 0; k < nb; ++k) b_[k] = e2_[k] * v[k] + q_[k] * na_[k];
    eval(b_, nb_);
    for (std::size_t k = 0; k < nb; ++k) c_[k] = e2_[k] * a_[k] + q_[k] * (2.0 * nb_[k] - nv_[k]);
    eval(c_, nc_);
    for (std::size_t k = 0; k < nb; ++k)
      v[k] = e_[k] * v[k] + f1_[k] * nv_[k] + 2.0 * f2_[k] * (na_[k] + nb_[k]) + f3_[k] * nc_[k];
  }

  const Grid& grid() const { return grid_; }

 private:
  void eval(const std::vector<Complex>& v, std::vector<Complex>& out) {
    irfft(grid_, v, u_);
    for (double& x : u_) x *= x;
    rfft(grid_, u_, sq_);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = g_[k] * sq_[k];
  }

  Grid grid_;
  bool nonlinear_;
  std::vector<double> e_, e2_, q_, f1_, f2_, f3_;
  std::vector<Complex> g_;
  std::vector<double> u_;
  std::vector<Complex> sq_, nv_, na_, nb_, nc_, a_, b_, c_;
};

}  // namespace

std::string to_string(Equation e) {
  switch (e) {
    case Equation::burgers: return "burgers";
    case Equation::hyper_diffusion: return "hyper_diffusion";
    case Equation::ks_conservative: return "ks_conservative";
  }
  return "?";
}

Equation parse_equation(const std::string& s) {
  if (s == "burgers") return Equation::burgers;
  if (s == "hyper_diffusion") return Equation::hyper_diffusion;
  if (s == "ks_conservative" || s == "ks") return Equation::ks_conservative;
  throw std::invalid_argument("unknown equation: " + s);
}

void Scenario1d::validate() const {
  if (n < 4 || n % 2) throw std::invalid_argument("scenario: n must be even and >= 4");
  if (!(length > 0.0) || !(dt > 0.0)) throw std::invalid_argument("scenario: length and dt must be positive");
  if (n_frames < 1 || substeps < 1 || burn_in < 0) throw std::invalid_argument("scenario: bad frame counts");
  if (equation != Equation::ks_conservative && !(coefficient >= 0.0))
    throw std::invalid_argument("scenario: coefficient must be nonnegative");
  if (ic_modes < 1 || 2 * ic_modes > n) throw std::invalid_argument("scenario: ic_modes out of range");
  if (n_train < 0 || n_valid < 0 || n_test < 0) throw std::invalid_argument("scenario: negative split size");
}

Scenario1d default_scenario(Equation e) {
  Scenario1d s;
  s.equation = e;
  switch (e) {
    case Equation::burgers:
      s.length = 2.0 * std::numbers::pi;
      s.dt = 0.05;
      s.substeps = 5;
      s.coefficient = 0.015;
      break;
    case Equation::hyper_diffusion: {
      s.length = 2.0 * std::numbers::pi;
      s.dt = 0.1;
      s.substeps = 1;
      const double w1 = 2.0 * std::numbers::pi / s.length;
      s.coefficient = -std::log(0.9) / (std::pow(w1, 4) * (s.n_frames - 1) * s.dt);
      break;
    }
    case Equation::ks_conservative:
      s.length = 60.0;
      s.dt = 0.5;
      s.substeps = 10;
      s.coefficient = 0.0;
      s.burn_in = 100;
      break;
  }
  return s;
}

void to_json(nlohmann::json& j, const Scenario1d& s) {
  j = {{"kind", "1d"},          {"equation", to_string(s.equation)},
       {"n", s.n},              {"length", s.length},
       {"n_frames", s.n_frames}, {"dt", s.dt},
       {"substeps", s.substeps}, {"coefficient", s.coefficient},
       {"burn_in", s.burn_in},   {"ic_modes", s.ic_modes},
       {"ic_amplitude", s.ic_amplitude}, {"n_train", s.n_train},
       {"n_valid", s.n_valid},   {"n_test", s.n_test},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, Scenario1d& s) {
  const Equation e = parse_equation(j.at("equation").get<std::string>());
  s = default_scenario(e);
  s.n = j.value("n", s.n);
  s.length = j.value("length", s.length);
  s.n_frames = j.value("n_frames", s.n_frames);
  s.dt = j.value("dt", s.dt);
  s.substeps = j.value("substeps", s.substeps);
  s.burn_in = j.value("burn_in", s.burn_in);
  s.ic_modes = j.value("ic_modes", s.ic_modes);
  s.ic_amplitude = j.value("ic_amplitude", s.ic_amplitude);
  s.n_train = j.value("n_train", s.n_train);
  s.n_valid = j.value("n_valid", s.n_valid);
  s.n_test = j.value("n_test", s.n_test);
  s.seed = j.value("seed", s.seed);
  if (j.contains("coefficient")) {
    s.coefficient = j.at("coefficient").get<double>();
  } else if (e == Equation::hyper_diffusion) {
    const double w1 = 2.0 * std::numbers::pi / s.length;
    s.coefficient = -std::log(0.9) / (std::pow(w1, 4) * std::max(s.n_frames - 1, 1) * s.dt);
  }
  s.validate();
}

Trajectory solve_1d(const Scenario1d& scenario, const Field& initial) {
  return solve_1d(scenario, initial, scenario.substeps);
}

Trajectory solve_1d(const Scenario1d& scenario, const Field& initial, int substeps) {
  scenario.validate();
  if (substeps < 1) throw std::invalid_argument("solve_1d: substeps must be positive");
  const Grid g = Grid::line(scenario.n, scenario.length);
  if (!(initial.grid == g) || initial.channels != 1) throw std::invalid_argument("solve_1d: initial field shape");
  initial.validate();

  Etdrk4 stepper(scenario, scenario.dt / substeps);
  std::vector<Complex> v(g.bins());
  rfft(g, initial.values, v);
  Field u(g, 1);
  auto advance = [&] {
    for (int s = 0; s < substeps; ++s) stepper.step(v);
    irfft(g, v, u.values);
    check_bounded(u.values, "solve_1d");
  };
  for (int f = 0; f < scenario.burn_in; ++f) advance();

  Trajectory traj;
  traj.dt = scenario.dt;
  traj.frames.reserve(scenario.n_frames);
  traj.frames.push_back(scenario.burn_in > 0 ? u : initial);
  for (int f = 1; f < scenario.n_frames; ++f) {
    advance();
    traj.frames.push_back(u);
  }
  return traj;
}

Field make_initial_1d(const Scenario1d& scenario, std::uint64_t seed) {
  const Grid g = Grid::line(scenario.n, scenario.length);
  Rng rng(seed);
  std::vector<double> a(scenario.ic_modes), b(scenario.ic_modes);
  for (int k = 0; k < scenario.ic_modes; ++k) {
    a[k] = rng.normal();
    b[k] = rng.normal();
  }
  Field f(g, 1);
  double peak = 0.0;
  for (int p = 0; p < g.points(); ++p) {
    const double x = 2.0 * std::numbers::pi * p / g.n[0];
    double u = 0.0;
    for (int k = 0; k < scenario.ic_modes; ++k) u += a[k] * std::cos((k + 1) * x) + b[k] * std::sin((k + 1) * x);
    f.values[p] = u;
    peak = std::max(peak, std::abs(u));
  }
  if (peak > 0.0)
    for (double& u : f.values) u *= scenario.ic_amplitude / peak;
  return f;
}

// ---------------------------------------------------------------------------
// Advection-diffusion-reaction

std::string to_string(AdrVariant v) {
  switch (v) {
    case AdrVariant::base: return "base";
    case AdrVariant::flip: return "flip";
    case AdrVariant::pos: return "pos";
    case AdrVariant::pos_neg: return "pos_neg";
    case AdrVariant::pos_neg_flip: return "pos_neg_flip";
  }
  return "?";
}

AdrVariant parse_adr_variant(const std::string& s) {
  if (s == "base") return AdrVariant::base;
  if (s == "flip") return AdrVariant::flip;
  if (s == "pos") return AdrVariant::pos;
  if (s == "pos_neg") return AdrVariant::pos_neg;
  if (s == "pos_neg_flip") return AdrVariant::pos_neg_flip;
  throw std::invalid_argument("unknown ADR variant: " + s);
}

double ScenarioAdr::side() const { return n * std::sqrt(alpha * dt / diffusion_number); }

Grid ScenarioAdr::grid() const { return Grid::plane(n, n, side(), side()); }

void ScenarioAdr::validate() const {
  if (n < 4 || n % 2) throw std::invalid_argument("ADR scenario: n must be even and >= 4");
  if (!(alpha > 0.0) || !(dt > 0.0) || !(diffusion_number > 0.0))
    throw std::invalid_argument("ADR scenario: alpha, dt and diffusion number must be positive");
  if (fine_steps < 1 || n_frames < 1 || n_frames > fine_steps + 1)
    throw std::invalid_argument("ADR scenario: need 1 <= n_frames <= fine_steps + 1");
  if (min_blobs < 1 || max_blobs < min_blobs) throw std::invalid_argument("ADR scenario: bad blob count range");
  if (!(blob_width_min > 0.0) || blob_width_max < blob_width_min || blob_amp_max < blob_amp_min)
    throw std::invalid_argument("ADR scenario: bad blob ranges");
  if (!(max_courant >= 0.0)) throw std::invalid_argument("ADR scenario: negative Courant bound");
  if (n_train < 0 || n_valid < 0 || n_test < 0) throw std::invalid_argument("ADR scenario: negative split size");
}

void to_json(nlohmann::json& j, const ScenarioAdr& s) {
  j = {{"kind", "adr"},
       {"variant", to_string(s.variant)},
       {"n", s.n},
       {"alpha", s.alpha},
       {"dt", s.dt},
       {"fine_steps", s.fine_steps},
       {"n_frames", s.n_frames},
       {"diffusion_number", s.diffusion_number},
       {"side", s.side()},
       {"min_blobs", s.min_blobs},
       {"max_blobs", s.max_blobs},
       {"blob_width", {s.blob_width_min, s.blob_width_max}},
       {"blob_amplitude", {s.blob_amp_min, s.blob_amp_max}},
       {"max_courant", s.max_courant},
       {"source_amplitude", {s.source_amp_min, s.source_amp_max}},
       {"sink_amplitude", {s.sink_amp_min, s.sink_amp_max}},
       {"zero_aux_in_train", s.zero_aux_in_train},
       {"n_train", s.n_train},
       {"n_valid", s.n_valid},
       {"n_test", s.n_test},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, ScenarioAdr& s) {
  s = ScenarioAdr{};
  s.variant = parse_adr_variant(j.value("variant", std::string("base")));
  s.n = j.value("n", s.n);
  s.alpha = j.value("alpha", s.alpha);
  s.dt = j.value("dt", s.dt);
  s.fine_steps = j.value("fine_steps", s.fine_steps);
  s.n_frames = j.value("n_frames", s.n_frames);
  s.diffusion_number = j.value("diffusion_number", s.diffusion_number);
  s.min_blobs = j.value("min_blobs", s.min_blobs);
  s.max_blobs = j.value("max_blobs", s.max_blobs);
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto r = j.at(key).get<std::vector<double>>();
    if (r.size() != 2) throw std::invalid_argument(std::string("ADR scenario: ") + key + " must be [lo, hi]");
    lo = r[0];
    hi = r[1];
  };
  range("blob_width", s.blob_width_min, s.blob_width_max);
  range("blob_amplitude", s.blob_amp_min, s.blob_amp_max);
  range("source_amplitude", s.source_amp_min, s.source_amp_max);
  range("sink_amplitude", s.sink_amp_min, s.sink_amp_max);
  s.max_courant = j.value("max_courant", s.max_courant);
  s.zero_aux_in_train = j.value("zero_aux_in_train", s.zero_aux_in_train);
  s.n_train = j.value("n_train", s.n_train);
  s.n_valid = j.value("n_valid", s.n_valid);
  s.n_test = j.value("n_test", s.n_test);
  s.seed = j.value("seed", s.seed);
  s.validate();
}

namespace {

// Offset from c to x on the periodic unit square, in [-1/2, 1/2).
double wrap(double d) { return d - std::floor(d + 0.5); }

bool flips(AdrVariant v) { return v == AdrVariant::flip || v == AdrVariant::pos_neg_flip; }
bool has_source(AdrVariant v) {
  return v == AdrVariant::pos || v == AdrVariant::pos_neg || v == AdrVariant::pos_neg_flip;
}
bool has_sink(AdrVariant v) { return v == AdrVariant::pos_neg || v == AdrVariant::pos_neg_flip; }

}  // namespace

AdrAux make_aux(const ScenarioAdr& scenario, std::uint64_t seed) {
  scenario.validate();
  const Grid g = scenario.grid();
  const int n = scenario.n;
  Rng rng(seed);
  AdrAux aux{Field(g, AdrAux::channels)};

  const double c0 = rng.uniform(-scenario.max_courant, scenario.max_courant);
  const double c1 = rng.uniform(-scenario.max_courant, scenario.max_courant);
  for (int i = 0; i < n; ++i) {
    const double sign = (flips(scenario.variant) && i >= n / 2) ? -1.0 : 1.0;
    for (int j = 0; j < n; ++j) {
      aux.fields.at(0, i * n + j) = sign * c0;
      aux.fields.at(1, i * n + j) = sign * c1;
    }
  }

  // Shapes are laid out in unit-square coordinates.
  if (has_source(scenario.variant)) {
    const double cx = rng.uniform(), cy = rng.uniform();
    const double size = rng.uniform(0.1, 0.25);
    const double rot = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amp = rng.uniform(scenario.source_amp_min, scenario.source_amp_max);
    std::array<std::array<double, 2>, 3> v{};
    for (int k = 0; k < 3; ++k) {
      const double a = rot + 2.0 * std::numbers::pi * k / 3.0;
      v[k] = {size * std::cos(a), size * std::sin(a)};
    }
    auto cross = [](const std::array<double, 2>& a, const std::array<double, 2>& b, double x, double y) {
      return (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    };
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double x = wrap(static_cast<double>(i) / n - cx), y = wrap(static_cast<double>(j) / n - cy);
        const double d0 = cross(v[0], v[1], x, y), d1 = cross(v[1], v[2], x, y), d2 = cross(v[2], v[0], x, y);
        const bool inside = (d0 >= 0 && d1 >= 0 && d2 >= 0) || (d0 <= 0 && d1 <= 0 && d2 <= 0);
        if (inside) aux.fields.at(2, i * n + j) += amp;
      }
  }
  if (has_sink(scenario.variant)) {
    const double cx = rng.uniform(), cy = rng.uniform();
    const int discs = 3 + static_cast<int>(rng.below(4));
    const double amp = rng.uniform(scenario.sink_amp_min, scenario.sink_amp_max);
    std::vector<std::array<double, 3>> d(discs);
    for (auto& disc : d) {
      const double r = rng.uniform(0.0, 0.1), a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      disc = {cx + r * std::cos(a), cy + r * std::sin(a), rng.uniform(0.04, 0.1)};
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double x = static_cast<double>(i) / n, y = static_cast<double>(j) / n;
        const bool inside = std::any_of(d.begin(), d.end(), [&](const auto& disc) {
          const double dx = wrap(x - disc[0]), dy = wrap(y - disc[1]);
          return dx * dx + dy * dy <= disc[2] * disc[2];
        });
        if (inside) aux.fields.at(2, i * n + j) -= amp;
      }
  }
  return aux;
}

Field make_initial_blobs(const ScenarioAdr& scenario, std::uint64_t seed, int n_blobs) {
  scenario.validate();
  const Grid g = scenario.grid();
  const int n = scenario.n;
  Rng rng(seed);
  if (n_blobs <= 0)
    n_blobs = scenario.min_blobs + static_cast<int>(rng.below(scenario.max_blobs - scenario.min_blobs + 1));
  Field f(g, 1);
  for (int b = 0; b < n_blobs; ++b) {
    const double cx = rng.uniform(), cy = rng.uniform();
    const double w = rng.uniform(scenario.blob_width_min, scenario.blob_width_max);
    const double amp = rng.uniform(scenario.blob_amp_min, scenario.blob_amp_max);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double dx = wrap(static_cast<double>(i) / n - cx), dy = wrap(static_cast<double>(j) / n - cy);
        f.values[i * n + j] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * w * w));
      }
  }
  return f;
}

void adr_rhs(const ScenarioAdr& scenario, const Field& u, const AdrAux& aux, Field& out) {
  const int n = scenario.n;
  const double dt = scenario.dt;
  // In grid units: diffusion alpha/(6h^2) = D/(6 dt), advective flux
  // difference (v u)/(2h) with v = c h/dt, reaction r/(steps dt).
  const double kd = scenario.diffusion_number / (6.0 * dt);
  const double ka = 0.5 / dt;
  const double kr = 1.0 / (scenario.fine_steps * dt);
  const double* uu = u.values.data();
  const double* c0 = aux.fields.values.data();
  const double* c1 = c0 + n * n;
  const double* r = c1 + n * n;
  if (out.values.size() != u.values.size()) out = Field(u.grid, 1);
  double* o = out.values.data();
  for (int i = 0; i < n; ++i) {
    const int im = (i + n - 1) % n, ip = (i + 1) % n;
    for (int j = 0; j < n; ++j) {
      const int jm = (j + n - 1) % n, jp = (j + 1) % n;
      const double edges = uu[im * n + j] + uu[ip * n + j] + uu[i * n + jm] + uu[i * n + jp];
      const double corners = uu[im * n + jm] + uu[im * n + jp] + uu[ip * n + jm] + uu[ip * n + jp];
      const double lap = 4.0 * edges + corners - 20.0 * uu[i * n + j];
      const double flux = (c0[ip * n + j] * uu[ip * n + j] - c0[im * n + j] * uu[im * n + j]) +
                          (c1[i * n + jp] * uu[i * n + jp] - c1[i * n + jm] * uu[i * n + jm]);
      o[i * n + j] = kd * lap - ka * flux + kr * r[i * n + j];
    }
  }
}

void adr_advance(const ScenarioAdr& scenario, Field& u, const AdrAux& aux, int steps, int refine) {
  if (refine < 1) throw std::invalid_argument("adr_advance: refine must be positive");
  const double h = scenario.dt / refine;
  Field k1(u.grid, 1), k2(u.grid, 1), k3(u.grid, 1), k4(u.grid, 1), tmp(u.grid, 1);
  const std::size_t m = u.values.size();
  for (int s = 0; s < steps; ++s) {
    adr_rhs(scenario, u, aux, k1);
    for (std::size_t i = 0; i < m; ++i) tmp.values[i] = u.values[i] + 0.5 * h * k1.values[i];
    adr_rhs(scenario, tmp, aux, k2);
    for (std::size_t i = 0; i < m; ++i) tmp.values[i] = u.values[i] + 0.5 * h * k2.values[i];
    adr_rhs(scenario, tmp, aux, k3);
    for (std::size_t i = 0; i < m; ++i) tmp.values[i] = u.values[i] + h * k3.values[i];
    adr_rhs(scenario, tmp, aux, k4);
    for (std::size_t i = 0; i < m; ++i)
      u.values[i] += h / 6.0 * (k1.values[i] + 2.0 * k2.values[i] + 2.0 * k3.values[i] + k4.values[i]);
  }
}

int adr_frame_step(const ScenarioAdr& scenario, int frame) {
  return static_cast<int>(static_cast<long>(frame) * scenario.fine_steps / scenario.n_frames);
}

Trajectory solve_adr(const ScenarioAdr& scenario, const Field& initial, const AdrAux& aux) {
  scenario.validate();
  const Grid g = scenario.grid();
  if (!(initial.grid == g) || initial.channels != 1) throw std::invalid_argument("solve_adr: initial field shape");
  if (!(aux.fields.grid == g) || aux.fields.channels != AdrAux::channels)
    throw std::invalid_argument("solve_adr: aux field shape");
  initial.validate();
  aux.fields.validate();
  // Explicit stability: the 9-point Laplacian's extreme eigenvalue is
  // -16/(3h^2); RK4 is stable on the real axis down to about -2.78.
  const double z = 16.0 / 3.0 * scenario.diffusion_number;
  double cmax = 0.0;
  for (int c = 0; c < 2; ++c)
    for (double v : aux.fields.channel(c)) cmax = std::max(cmax, std::abs(v));
  if (z > 2.78 || 2.0 * cmax > 2.8)
    std::cerr << "warning: solve_adr: time step exceeds the RK4 stability bound (diffusion " << z
              << ", advection " << 2.0 * cmax << ")\n";

  Trajectory traj;
  traj.dt = scenario.dt * scenario.fine_steps / scenario.n_frames;
  traj.aux = aux.fields;
  Field u = initial;
  int at = 0;
  for (int f = 0; f < scenario.n_frames; ++f) {
    const int target = adr_frame_step(scenario, f);
    adr_advance(scenario, u, aux, target - at);
    at = target;
    check_bounded(u.values, "solve_adr");
    traj.frames.push_back(u);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

constexpr std::uint64_t kSplitKeys[3] = {0, 1, 2};
const char* kSplitNames[3] = {"train", "valid", "test"};

}  // namespace

Dataset generate_dataset(const Scenario1d& scenario) {
  scenario.validate();
  Dataset d;
  d.scenario_json = nlohmann::json(scenario).dump();
  const int counts[3] = {scenario.n_train, scenario.n_valid, scenario.n_test};
  std::vector<Trajectory>* splits[3] = {&d.train, &d.valid, &d.test};
  for (int s = 0; s < 3; ++s)
    for (int i = 0; i < counts[s]; ++i) {
      const std::uint64_t seed = derive_seed(scenario.seed, {kSplitKeys[s], static_cast<std::uint64_t>(i)});
      splits[s]->push_back(solve_1d(scenario, make_initial_1d(scenario, seed)));
    }
  return d;
}

Dataset generate_dataset(const ScenarioAdr& scenario) {
  scenario.validate();
  Dataset d;
  d.scenario_json = nlohmann::json(scenario).dump();
  const int counts[3] = {scenario.n_train, scenario.n_valid, scenario.n_test};
  std::vector<Trajectory>* splits[3] = {&d.train, &d.valid, &d.test};
  for (int s = 0; s < 3; ++s)
    for (int i = 0; i < counts[s]; ++i) {
      const std::uint64_t seed = derive_seed(scenario.seed, {kSplitKeys[s], static_cast<std::uint64_t>(i)});
      const AdrAux aux = make_aux(scenario, derive_seed(seed, {2}));
      Trajectory t = solve_adr(scenario, make_initial_blobs(scenario, derive_seed(seed, {1})), aux);
      if (s == 0 && scenario.zero_aux_in_train) std::fill(t.aux->values.begin(), t.aux->values.end(), 0.0);
      splits[s]->push_back(std::move(t));
    }
  return d;
}

void save_dataset(const std::string& dir, const Dataset& data, const std::string& extra_manifest_json) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "luno-dataset";
  manifest["version"] = 1;
  manifest["scenario"] = nlohmann::json::parse(data.scenario_json.empty() ? "{}" : data.scenario_json);
  manifest["meta"] = nlohmann::json::parse(extra_manifest_json);
  const std::vector<Trajectory>* splits[3] = {&data.train, &data.valid, &data.test};
  bool has_aux = false;
  for (int s = 0; s < 3; ++s) {
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < splits[s]->size(); ++i) {
      const Trajectory& t = (*splits[s])[i];
      t.validate();
      char name[64];
      std::snprintf(name, sizeof name, "%s_%05zu", kSplitNames[s], i);
      save_fields((fs::path(dir) / (std::string(name) + ".bin")).string(), t.frames);
      nlohmann::json e = {{"file", std::string(name) + ".bin"}, {"dt", t.dt}, {"frames", t.frames.size()}};
      if (t.aux) {
        has_aux = true;
        save_fields((fs::path(dir) / (std::string(name) + ".aux.bin")).string(), std::span<const Field>(&*t.aux, 1));
        e["aux"] = std::string(name) + ".aux.bin";
      }
      entries.push_back(e);
    }
    manifest["splits"][kSplitNames[s]] = entries;
  }
  manifest["channel_roles"] = {{"solution", {"u"}}};
  if (has_aux) manifest["channel_roles"]["aux"] = {"velocity_0", "velocity_1", "reaction"};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir);
  out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("missing dataset manifest in " + dir);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("corrupt dataset manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "luno-dataset") throw std::runtime_error("not a dataset manifest: " + dir);
  Dataset d;
  d.scenario_json = manifest.at("scenario").dump();
  std::vector<Trajectory>* splits[3] = {&d.train, &d.valid, &d.test};
  for (int s = 0; s < 3; ++s) {
    if (!manifest["splits"].contains(kSplitNames[s])) continue;
    for (const auto& e : manifest["splits"][kSplitNames[s]]) {
      Trajectory t;
      t.frames = load_fields((fs::path(dir) / e.at("file").get<std::string>()).string());
      t.dt = e.value("dt", 1.0);
      if (e.contains("aux")) {
        auto aux = load_fields((fs::path(dir) / e.at("aux").get<std::string>()).string());
        if (aux.size() != 1) throw std::runtime_error("dataset: aux file must hold one frame");
        t.aux = std::move(aux.front());
      }
      t.validate();
      splits[s]->push_back(std::move(t));
    }
  }
  return d;
}

}  // namespace luno
