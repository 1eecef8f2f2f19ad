#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>

#include <nlohmann/json.hpp>

#include "luno/pde.hpp"

using namespace luno;

namespace {

double max_abs_diff(const Field& a, const Field& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

double total(const Field& f) { return std::accumulate(f.values.begin(), f.values.end(), 0.0); }

ScenarioAdr small_adr(AdrVariant v) {
  ScenarioAdr s;
  s.variant = v;
  s.n = 32;
  return s;
}

}  // namespace

TEST_CASE("hyper-diffusion single mode decays analytically") {
  Scenario1d s = default_scenario(Equation::hyper_diffusion);
  const Grid g = Grid::line(s.n, s.length);
  for (int m : {1, 2, 3}) {
    Field u0(g, 1);
    for (int p = 0; p < g.n[0]; ++p) u0.values[p] = std::cos(2.0 * std::numbers::pi * m * p / g.n[0]);
    const Trajectory t = solve_1d(s, u0);
    REQUIRE(t.frames.size() == 59);
    const double w = 2.0 * std::numbers::pi * m / s.length;
    for (int f = 0; f < 59; f += 7) {
      const double decay = std::exp(-s.coefficient * std::pow(w, 4) * f * s.dt);
      for (int p = 0; p < g.n[0]; ++p) CHECK(std::abs(t.frames[f].values[p] - decay * u0.values[p]) < 1e-8);
    }
  }
  // The default kappa makes the slowest mode lose 10% over the trajectory.
  Field u0(g, 1);
  for (int p = 0; p < g.n[0]; ++p) u0.values[p] = std::cos(2.0 * std::numbers::pi * p / g.n[0]);
  CHECK(solve_1d(s, u0).frames.back().values[0] == doctest::Approx(0.9).epsilon(1e-10));
}

TEST_CASE("zero initial condition stays zero") {
  for (Equation e : {Equation::burgers, Equation::hyper_diffusion, Equation::ks_conservative}) {
    Scenario1d s = default_scenario(e);
    s.n_frames = 5;
    const Field z(Grid::line(s.n, s.length), 1);
    for (const auto& f : solve_1d(s, z).frames)
      for (double v : f.values) CHECK(v == 0.0);
  }
}

TEST_CASE("Burgers conserves the mean") {
  const Scenario1d s = default_scenario(Equation::burgers);
  const Field u0 = make_initial_1d(s, 3);
  const Trajectory t = solve_1d(s, u0);
  const double m0 = total(t.frames.front()) / s.n;
  double peak = 0.0;
  for (const auto& f : t.frames) {
    CHECK(std::abs(total(f) / s.n - m0) < 1e-8);
    for (double v : f.values) peak = std::max(peak, std::abs(v));
  }
  // Viscous Burgers obeys a maximum principle; allow slight spectral overshoot.
  CHECK(peak < 1.05 * s.ic_amplitude);
}

TEST_CASE("initial conditions") {
  const Scenario1d s = default_scenario(Equation::burgers);
  const Field a = make_initial_1d(s, 5), b = make_initial_1d(s, 5), c = make_initial_1d(s, 6);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  double peak = 0.0;
  for (double v : a.values) peak = std::max(peak, std::abs(v));
  CHECK(peak == doctest::Approx(s.ic_amplitude));
  CHECK(std::abs(total(a)) < 1e-10);
}

TEST_CASE("ETDRK4 self-convergence") {
  for (Equation e : {Equation::burgers, Equation::ks_conservative}) {
    Scenario1d s = default_scenario(e);
    s.n_frames = 4;
    s.burn_in = 0;
    s.ic_amplitude = e == Equation::burgers ? 0.5 : 1.0;
    s.ic_modes = 3;
    s.dt = e == Equation::burgers ? 0.2 : 1.0;
    const Field u0 = make_initial_1d(s, 11);
    const Field ref = solve_1d(s, u0, 64).frames.back();
    const double e1 = max_abs_diff(solve_1d(s, u0, 4).frames.back(), ref);
    const double e2 = max_abs_diff(solve_1d(s, u0, 8).frames.back(), ref);
    const double order = std::log2(e1 / e2);
    INFO(to_string(e) << " errors " << e1 << " " << e2);
    CHECK(order >= 3.5);
  }
}

TEST_CASE("blow-up is detected") {
  Scenario1d s = default_scenario(Equation::burgers);
  s.ic_amplitude = 5e6;
  s.n_frames = 3;
  CHECK_THROWS_AS(solve_1d(s, make_initial_1d(s, 1)), std::runtime_error);
}

TEST_CASE("scenario validation and json") {
  Scenario1d s = default_scenario(Equation::ks_conservative);
  s.seed = 9;
  const Scenario1d r = nlohmann::json(s).get<Scenario1d>();
  CHECK(r.length == s.length);
  CHECK(r.burn_in == s.burn_in);
  CHECK(r.seed == 9);
  s.n = 7;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_THROWS_AS(parse_equation("heat"), std::invalid_argument);

  const ScenarioAdr a = small_adr(AdrVariant::pos_neg_flip);
  const ScenarioAdr b = nlohmann::json(a).get<ScenarioAdr>();
  CHECK(b.variant == AdrVariant::pos_neg_flip);
  CHECK(b.side() == doctest::Approx(a.side()));
}

TEST_CASE("ADR heat mode matches the discrete decay") {
  const ScenarioAdr s = small_adr(AdrVariant::base);
  const int n = s.n;
  AdrAux aux{Field(s.grid(), AdrAux::channels)};
  const int mx = 2, my = 3;
  const double tx = 2.0 * std::numbers::pi * mx / n, ty = 2.0 * std::numbers::pi * my / n;
  Field u(s.grid(), 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) u.values[i * n + j] = std::cos(tx * i) * std::cos(ty * j);
  const Field u0 = u;
  // Symbol of the compact stencil times alpha dt = diffusion number.
  const double z = s.diffusion_number / 6.0 *
                   (8.0 * std::cos(tx) + 8.0 * std::cos(ty) + 4.0 * std::cos(tx) * std::cos(ty) - 20.0);
  const double g = 1.0 + z + z * z / 2.0 + z * z * z / 6.0 + z * z * z * z / 24.0;
  const int steps = 50;
  adr_advance(s, u, aux, steps);
  const double amp = std::pow(g, steps);
  double worst = 0.0;
  for (std::size_t i = 0; i < u.values.size(); ++i)
    worst = std::max(worst, std::abs(u.values[i] - amp * u0.values[i]));
  CHECK(worst < 1e-6 * amp);
}

TEST_CASE("ADR conserves mass without reaction") {
  for (AdrVariant v : {AdrVariant::base, AdrVariant::flip}) {
    const ScenarioAdr s = small_adr(v);
    const AdrAux aux = make_aux(s, 4);
    Field u = make_initial_blobs(s, 5);
    double m = total(u);
    for (int step = 0; step < 40; ++step) {
      adr_advance(s, u, aux, 1);
      const double m1 = total(u);
      CHECK(std::abs(m1 - m) < 1e-10 * std::max(1.0, std::abs(m)));
      m = m1;
    }
  }
}

TEST_CASE("ADR RK4 self-convergence") {
  ScenarioAdr s = small_adr(AdrVariant::pos_neg_flip);
  s.blob_width_min = s.blob_width_max = 0.15;
  const AdrAux aux = make_aux(s, 7);
  const Field u0 = make_initial_blobs(s, 8, 2);
  auto run = [&](int refine) {
    Field u = u0;
    adr_advance(s, u, aux, 20 * refine, refine);
    return u;
  };
  const Field ref = run(16);
  const double e1 = max_abs_diff(run(2), ref), e2 = max_abs_diff(run(4), ref);
  INFO("errors " << e1 << " " << e2);
  CHECK(std::log2(e1 / e2) >= 3.5);
}

TEST_CASE("ADR source increases mass") {
  const ScenarioAdr s = small_adr(AdrVariant::pos);
  const AdrAux aux = make_aux(s, 12);
  double source = 0.0;
  for (double r : aux.fields.channel(2)) {
    CHECK(r >= 0.0);
    source += r;
  }
  REQUIRE(source > 0.0);
  const Trajectory t = solve_adr(s, make_initial_blobs(s, 13), aux);
  for (std::size_t f = 1; f < t.frames.size(); ++f) CHECK(total(t.frames[f]) > total(t.frames[f - 1]));
  // Over the full run the source adds its amplitude-weighted area.
  Field u = t.frames.front();
  adr_advance(s, u, aux, s.fine_steps);
  CHECK(total(u) - total(t.frames.front()) == doctest::Approx(source).epsilon(1e-9));
}

TEST_CASE("ADR auxiliary fields") {
  const int n = 32;
  const AdrAux base = make_aux(small_adr(AdrVariant::base), 1);
  for (int c = 0; c < 2; ++c)
    for (double v : base.fields.channel(c)) CHECK(v == base.fields.at(c, 0));
  for (double r : base.fields.channel(2)) CHECK(r == 0.0);

  const AdrAux flip = make_aux(small_adr(AdrVariant::flip), 1);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) CHECK(flip.fields.at(c, i * n + j) == -flip.fields.at(c, (n - 1 - i) * n + j));

  int pos = 0, neg = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const AdrAux pn = make_aux(small_adr(AdrVariant::pos_neg), seed);
    bool p = false, q = false;
    for (double r : pn.fields.channel(2)) {
      p |= r > 0.0;
      q |= r < 0.0;
    }
    pos += p;
    neg += q;
  }
  CHECK(pos == 5);
  CHECK(neg == 5);
}

TEST_CASE("Gaussian blobs") {
  const ScenarioAdr s = small_adr(AdrVariant::base);
  CHECK(make_initial_blobs(s, 3).values == make_initial_blobs(s, 3).values);
  const int n = s.n;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Field f = make_initial_blobs(s, seed, 1);
    CHECK(total(f) > 0.0);
    int maxima = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double v = f.values[i * n + j];
        bool is_max = true;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj)
            if ((di || dj) && f.values[((i + di + n) % n) * n + (j + dj + n) % n] >= v) is_max = false;
        maxima += is_max;
      }
    CHECK(maxima == 1);
  }
}

TEST_CASE("ADR sub-sampling") {
  ScenarioAdr s = small_adr(AdrVariant::flip);
  CHECK(adr_frame_step(s, 0) == 0);
  CHECK(adr_frame_step(s, 58) == 58 * 200 / 59);
  CHECK(adr_frame_step(s, 30) == 101);
  s.n_frames = 8;
  s.fine_steps = 20;
  const AdrAux aux = make_aux(s, 2);
  const Field u0 = make_initial_blobs(s, 3);
  const Trajectory t = solve_adr(s, u0, aux);
  REQUIRE(t.frames.size() == 8);
  Field u = u0;
  adr_advance(s, u, aux, adr_frame_step(s, 5));
  CHECK(t.frames[5].values == u.values);
  CHECK(t.aux->values == aux.fields.values);
}

TEST_CASE("datasets are deterministic and round-trip") {
  Scenario1d s = default_scenario(Equation::burgers);
  s.n = 32;
  s.n_frames = 6;
  s.n_train = 2;
  s.n_valid = 1;
  s.n_test = 1;
  s.seed = 4;
  const Dataset a = generate_dataset(s), b = generate_dataset(s);
  REQUIRE(a.train.size() == 2);
  CHECK(a.train[1].frames[5].values == b.train[1].frames[5].values);
  CHECK(a.train[0].frames[0].values != a.train[1].frames[0].values);
  CHECK(a.train[0].frames[0].values != a.test[0].frames[0].values);

  const auto dir = std::filesystem::temp_directory_path() / "luno_test_dataset";
  std::filesystem::remove_all(dir);
  save_dataset(dir.string(), a, R"({"note":"x"})");
  const Dataset c = load_dataset(dir.string());
  CHECK(c.valid.size() == 1);
  CHECK(c.test[0].frames[3].values == a.test[0].frames[3].values);
  CHECK(c.test[0].dt == a.test[0].dt);
  CHECK(nlohmann::json::parse(c.scenario_json).at("equation") == "burgers");

  ScenarioAdr r = small_adr(AdrVariant::pos);
  r.n_frames = 4;
  r.fine_steps = 8;
  r.n_train = r.n_valid = r.n_test = 1;
  const Dataset d = generate_dataset(r);
  for (double v : d.train[0].aux->values) CHECK(v == 0.0);
  double src = 0.0;
  for (double v : d.test[0].aux->channel(2)) src += v;
  CHECK(src > 0.0);
  save_dataset(dir.string(), d);
  const Dataset e = load_dataset(dir.string());
  CHECK(e.test[0].aux->values == d.test[0].aux->values);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_dataset(dir.string()), std::runtime_error);
}
