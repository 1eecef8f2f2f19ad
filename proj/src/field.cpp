#include "luno/field.hpp"

#include <fftw3.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <tuple>

#include <nlohmann/json.hpp>

namespace luno {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// FFTW planning is not thread-safe; executing a plan is.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan forward(const Grid& g) { return get(g, true); }
  fftw_plan backward(const Grid& g) { return get(g, false); }

  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  using Key = std::tuple<int, int, int, bool>;

  fftw_plan get(const Grid& g, bool fwd) {
    const Key key{g.dims, g.n[0], g.dims == 2 ? g.n[1] : 1, fwd};
    std::lock_guard lock(mutex_);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<double> real(g.points());
    std::vector<fftw_complex> cplx(g.bins());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan plan = nullptr;
    if (g.dims == 1) {
      plan = fwd ? fftw_plan_dft_r2c_1d(g.n[0], real.data(), cplx.data(), flags)
                 : fftw_plan_dft_c2r_1d(g.n[0], cplx.data(), real.data(), flags);
    } else {
      plan = fwd ? fftw_plan_dft_r2c_2d(g.n[0], g.n[1], real.data(), cplx.data(), flags)
                 : fftw_plan_dft_c2r_2d(g.n[0], g.n[1], cplx.data(), real.data(), flags);
    }
    if (!plan) throw std::runtime_error("FFTW planning failed");
    plans_.emplace(key, plan);
    return plan;
  }

  std::mutex mutex_;
  std::map<Key, fftw_plan> plans_;
};

}  // namespace

Grid Grid::line(int n, double length) {
  Grid g;
  g.dims = 1;
  g.n = {n, 1};
  g.length = {length, 1.0};
  g.validate();
  return g;
}

Grid Grid::plane(int n0, int n1, double length0, double length1) {
  Grid g;
  g.dims = 2;
  g.n = {n0, n1};
  g.length = {length0, length1};
  g.validate();
  return g;
}

void Grid::validate() const {
  if (dims != 1 && dims != 2) throw std::invalid_argument("grid: dims must be 1 or 2");
  for (int d = 0; d < dims; ++d) {
    if (n[d] < 4 || n[d] % 2 != 0)
      throw std::invalid_argument("grid: points per dimension must be even and >= 4");
    if (!(length[d] > 0.0) || !std::isfinite(length[d]))
      throw std::invalid_argument("grid: domain length must be positive");
  }
}

Point Grid::coordinate(int p) const {
  if (dims == 1) return {p * spacing(0), 0.0};
  const int i0 = p / n[1];
  const int i1 = p % n[1];
  return {i0 * spacing(0), i1 * spacing(1)};
}

std::vector<Point> Grid::coordinates() const {
  std::vector<Point> pts(points());
  for (int p = 0; p < points(); ++p) pts[p] = coordinate(p);
  return pts;
}

Grid Grid::padded(int extra) const {
  Grid g = *this;
  for (int d = 0; d < dims; ++d) {
    g.length[d] = length[d] * (n[d] + extra) / n[d];
    g.n[d] = n[d] + extra;
  }
  return g;
}

Field::Field(const Grid& g, int c) : grid(g), channels(c), values(static_cast<std::size_t>(c) * g.points(), 0.0) {}

Field::Field(const Grid& g, int c, std::vector<double> v) : grid(g), channels(c), values(std::move(v)) {
  if (values.size() != static_cast<std::size_t>(c) * g.points())
    throw std::invalid_argument("field: values length != channels * points");
}

std::span<double> Field::channel(int c) {
  return {values.data() + static_cast<std::size_t>(c) * points(), static_cast<std::size_t>(points())};
}

std::span<const double> Field::channel(int c) const {
  return {values.data() + static_cast<std::size_t>(c) * points(), static_cast<std::size_t>(points())};
}

void Field::validate() const {
  grid.validate();
  if (channels <= 0) throw std::invalid_argument("field: channels must be positive");
  if (values.size() != static_cast<std::size_t>(channels) * points())
    throw std::invalid_argument("field: values length != channels * points");
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("field: non-finite entry");
}

std::span<Complex> SpectralField::channel(int c) {
  return {coeffs.data() + static_cast<std::size_t>(c) * grid.bins(), static_cast<std::size_t>(grid.bins())};
}

std::span<const Complex> SpectralField::channel(int c) const {
  return {coeffs.data() + static_cast<std::size_t>(c) * grid.bins(), static_cast<std::size_t>(grid.bins())};
}

void rfft(const Grid& grid, std::span<const double> in, std::span<Complex> out) {
  if (in.size() != static_cast<std::size_t>(grid.points()) || out.size() != static_cast<std::size_t>(grid.bins()))
    throw std::invalid_argument("rfft: buffer size mismatch");
  // r2c plans preserve their input by default.
  fftw_execute_dft_r2c(PlanCache::instance().forward(grid), const_cast<double*>(in.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

void irfft(const Grid& grid, std::span<const Complex> in, std::span<double> out) {
  if (in.size() != static_cast<std::size_t>(grid.bins()) || out.size() != static_cast<std::size_t>(grid.points()))
    throw std::invalid_argument("irfft: buffer size mismatch");
  std::vector<Complex> scratch(in.begin(), in.end());
  const int nb = grid.last_bins();
  const int nl = grid.n[grid.dims - 1];
  // Project onto the real part of the inverse: the k_last = 0 and Nyquist
  // columns must be Hermitian along the leading dimension.
  const int last_cols[2] = {0, nl / 2};
  if (grid.dims == 1) {
    for (int c : last_cols) scratch[c] = Complex(scratch[c].real(), 0.0);
  } else {
    const int n0 = grid.n[0];
    for (int c : last_cols) {
      for (int k0 = 0; k0 <= n0 / 2; ++k0) {
        const int m0 = (n0 - k0) % n0;
        const Complex a = in[k0 * nb + c];
        const Complex b = in[m0 * nb + c];
        const Complex sym = 0.5 * (a + std::conj(b));
        scratch[k0 * nb + c] = sym;
        scratch[m0 * nb + c] = std::conj(sym);
      }
    }
  }
  fftw_execute_dft_c2r(PlanCache::instance().backward(grid), reinterpret_cast<fftw_complex*>(scratch.data()),
                       out.data());
  const double scale = 1.0 / grid.points();
  for (double& v : out) v *= scale;
}

SpectralField rfft(const Field& field) {
  SpectralField spec{field.grid, field.channels,
                     std::vector<Complex>(static_cast<std::size_t>(field.channels) * field.grid.bins())};
  for (int c = 0; c < field.channels; ++c) rfft(field.grid, field.channel(c), spec.channel(c));
  return spec;
}

Field irfft(const SpectralField& spec, const Grid& grid) {
  if (!(spec.grid == grid) || spec.coeffs.size() != static_cast<std::size_t>(spec.channels) * grid.bins())
    throw std::invalid_argument("irfft: spectrum does not match grid");
  Field out(grid, spec.channels);
  for (int c = 0; c < spec.channels; ++c) irfft(grid, spec.channel(c), out.channel(c));
  return out;
}

int signed_index(const Grid& grid, int dim, int k) {
  if (dim == grid.dims - 1) return k;
  return k <= grid.n[dim] / 2 ? k : k - grid.n[dim];
}

bool is_nyquist(const Grid& grid, int dim, int k) { return 2 * k == grid.n[dim]; }

double bin_weight(const Grid& grid, int bin) {
  const int k = bin % grid.last_bins();
  return (k == 0 || is_nyquist(grid, grid.dims - 1, k)) ? 1.0 : 2.0;
}

namespace {

Complex dim_factor(const Grid& grid, int dim, int k, double x) {
  const double theta = kTwoPi * signed_index(grid, dim, k) * x / grid.length[dim];
  if (is_nyquist(grid, dim, k)) return {std::cos(theta), 0.0};
  return {std::cos(theta), std::sin(theta)};
}

}  // namespace

Complex bin_basis(const Grid& grid, int bin, const Point& x) {
  if (grid.dims == 1) return dim_factor(grid, 0, bin, x[0]);
  const int nb = grid.last_bins();
  return dim_factor(grid, 0, bin / nb, x[0]) * dim_factor(grid, 1, bin % nb, x[1]);
}

void check_points(const Grid& grid, std::span<const Point> points) {
  for (const auto& p : points)
    for (int d = 0; d < grid.dims; ++d)
      if (!(p[d] >= 0.0 && p[d] < grid.length[d]))
        throw std::invalid_argument("query point outside the periodic domain");
}

std::vector<double> evaluate_spectrum(const SpectralField& spec, std::span<const Point> points) {
  const Grid& g = spec.grid;
  check_points(g, points);
  const int np = static_cast<int>(points.size());
  const int nb = g.last_bins();
  const double scale = 1.0 / g.points();
  std::vector<double> out(static_cast<std::size_t>(spec.channels) * np, 0.0);
  std::vector<Complex> f1(nb), f0(g.dims == 2 ? g.n[0] : 1);
  std::vector<double> w1(nb);
  for (int k = 0; k < nb; ++k) w1[k] = (k == 0 || is_nyquist(g, g.dims - 1, k)) ? 1.0 : 2.0;
  for (int p = 0; p < np; ++p) {
    const Point& x = points[p];
    const int ld = g.dims - 1;
    for (int k = 0; k < nb; ++k) f1[k] = w1[k] * dim_factor(g, ld, k, x[ld]);
    if (g.dims == 2)
      for (int k0 = 0; k0 < g.n[0]; ++k0) f0[k0] = dim_factor(g, 0, k0, x[0]);
    for (int c = 0; c < spec.channels; ++c) {
      auto coeffs = spec.channel(c);
      double acc = 0.0;
      if (g.dims == 1) {
        for (int k = 0; k < nb; ++k) acc += (coeffs[k] * f1[k]).real();
      } else {
        for (int k0 = 0; k0 < g.n[0]; ++k0) {
          Complex row = 0.0;
          for (int k = 0; k < nb; ++k) row += coeffs[k0 * nb + k] * f1[k];
          acc += (row * f0[k0]).real();
        }
      }
      out[static_cast<std::size_t>(c) * np + p] = acc * scale;
    }
  }
  return out;
}

std::vector<double> fourier_interpolate(const Field& field, std::span<const Point> points) {
  return evaluate_spectrum(rfft(field), points);
}

namespace {

void write_le(std::ostream& out, std::span<const double> data) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  } else {
    for (double v : data) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      bits = __builtin_bswap64(bits);
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
}

void read_le(std::istream& in, std::span<double> data) {
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw std::runtime_error("field file: truncated payload");
  if constexpr (std::endian::native == std::endian::big) {
    for (double& v : data) v = std::bit_cast<double>(__builtin_bswap64(std::bit_cast<std::uint64_t>(v)));
  }
}

}  // namespace

void write_fields(std::ostream& out, std::span<const Field> frames, const std::string& extra_json) {
  if (frames.empty()) throw std::invalid_argument("write_fields: no frames");
  const Field& f0 = frames.front();
  nlohmann::json header;
  header["dims"] = f0.grid.dims;
  header["points"] = std::vector<int>(f0.grid.n.begin(), f0.grid.n.begin() + f0.grid.dims);
  header["lengths"] = std::vector<double>(f0.grid.length.begin(), f0.grid.length.begin() + f0.grid.dims);
  header["channels"] = f0.channels;
  header["frames"] = frames.size();
  header["dtype"] = "f64le";
  const auto extra = nlohmann::json::parse(extra_json);
  if (!extra.empty()) header["meta"] = extra;
  out << header.dump() << '\n';
  for (const auto& f : frames) {
    if (!(f.grid == f0.grid) || f.channels != f0.channels)
      throw std::invalid_argument("write_fields: frames differ in shape");
    write_le(out, f.values);
  }
  if (!out) throw std::runtime_error("write_fields: stream error");
}

std::vector<Field> read_fields(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("field file: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("field file: corrupt header: ") + e.what());
  }
  if (header.value("dtype", "") != "f64le") throw std::runtime_error("field file: unsupported dtype");
  Grid g;
  g.dims = header.at("dims").get<int>();
  const auto pts = header.at("points").get<std::vector<int>>();
  const auto lens = header.at("lengths").get<std::vector<double>>();
  if (static_cast<int>(pts.size()) != g.dims || static_cast<int>(lens.size()) != g.dims)
    throw std::runtime_error("field file: inconsistent header");
  for (int d = 0; d < g.dims; ++d) {
    g.n[d] = pts[d];
    g.length[d] = lens[d];
  }
  g.validate();
  const int channels = header.at("channels").get<int>();
  const auto frames = header.value("frames", std::size_t{1});
  std::vector<Field> out;
  out.reserve(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    Field f(g, channels);
    read_le(in, f.values);
    out.push_back(std::move(f));
  }
  return out;
}

void save_fields(const std::string& path, std::span<const Field> frames, const std::string& extra_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_fields(out, frames, extra_json);
}

std::vector<Field> load_fields(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return read_fields(in);
}

}  // namespace luno
