#pragma once

// Discretized periodic fields and the real-FFT primitives shared by the
// spectral layers, the PDE solvers and Fourier interpolation.
//
// FFT convention: the forward transform is unnormalized,
//   X_k = sum_n v_n exp(-i <w_k, x_n>),
// and the inverse carries the 1/prod(N) factor. With this convention the
// inverse of a half spectrum is
//   v(x) = 1/N sum_k w_k Re(X_k E_k(x)),
// where w_k = 1 for the DC and Nyquist bins of the last dimension and 2
// otherwise, and E_k(x) = prod_d e^{i w_{k,d} x_d}, with the factor for a
// Nyquist bin replaced by cos(w_{k,d} x_d). The same formula defines the
// band-limited interpolant used off-grid.

#include <array>
#include <complex>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace luno {

using Complex = std::complex<double>;
using Point = std::array<double, 2>;

/// Regular periodic grid on [0, L_0) x [0, L_1), endpoint exclusive.
struct Grid {
  int dims = 1;
  std::array<int, 2> n{4, 1};
  std::array<double, 2> length{1.0, 1.0};

  static Grid line(int n, double length);
  static Grid plane(int n0, int n1, double length0, double length1);

  /// Throws std::invalid_argument unless every size is even and >= 4 and
  /// every length is positive.
  void validate() const;

  int points() const { return dims == 1 ? n[0] : n[0] * n[1]; }
  /// Retained real-FFT bins of the last dimension, N/2 + 1.
  int last_bins() const { return n[dims - 1] / 2 + 1; }
  /// Total number of half-spectrum bins (row-major, last dim fastest).
  int bins() const { return dims == 1 ? last_bins() : n[0] * last_bins(); }
  double spacing(int dim) const { return length[dim] / n[dim]; }
  /// Grid coordinate of flat point index p.
  Point coordinate(int p) const;
  /// All grid coordinates in flat order.
  std::vector<Point> coordinates() const;

  /// Grid with `extra` points appended per dimension at the same spacing.
  Grid padded(int extra) const;

  bool operator==(const Grid&) const = default;
};

/// Function values on a grid, stored channel-outer: values[c * points + p].
struct Field {
  Grid grid;
  int channels = 0;
  std::vector<double> values;

  Field() = default;
  Field(const Grid& grid, int channels);
  Field(const Grid& grid, int channels, std::vector<double> values);

  int points() const { return grid.points(); }
  std::size_t size() const { return values.size(); }
  double& at(int c, int p) { return values[static_cast<std::size_t>(c) * points() + p]; }
  double at(int c, int p) const { return values[static_cast<std::size_t>(c) * points() + p]; }
  std::span<double> channel(int c);
  std::span<const double> channel(int c) const;

  /// Checks shape consistency and finiteness of every entry.
  void validate() const;
};

/// Half-spectrum coefficients: coeffs[c * grid.bins() + b].
struct SpectralField {
  Grid grid;
  int channels = 0;
  std::vector<Complex> coeffs;

  std::span<Complex> channel(int c);
  std::span<const Complex> channel(int c) const;
};

SpectralField rfft(const Field& field);
Field irfft(const SpectralField& spec, const Grid& grid);

/// Single-channel transforms on raw buffers (sizes grid.points() and
/// grid.bins()). irfft never modifies its input.
void rfft(const Grid& grid, std::span<const double> in, std::span<Complex> out);
void irfft(const Grid& grid, std::span<const Complex> in, std::span<double> out);

/// Signed wavenumber index of bin coordinate `k` along dimension `dim`.
int signed_index(const Grid& grid, int dim, int k);
/// True if bin coordinate `k` is the Nyquist bin of dimension `dim`.
bool is_nyquist(const Grid& grid, int dim, int k);
/// Hermitian weight of a flat bin: 1 for DC/Nyquist of the last dim, else 2.
double bin_weight(const Grid& grid, int bin);
/// E_k(x) for flat bin index `bin` (see the file comment).
Complex bin_basis(const Grid& grid, int bin, const Point& x);

/// Evaluates the band-limited interpolant of a half spectrum at `points`.
/// Returns channels x points, channel-outer.
std::vector<double> evaluate_spectrum(const SpectralField& spec, std::span<const Point> points);

/// Trigonometric interpolation of `field`; exact at grid points and periodic.
/// Throws std::invalid_argument for coordinates outside [0, L).
std::vector<double> fourier_interpolate(const Field& field, std::span<const Point> points);

/// Throws std::invalid_argument if a point lies outside the periodic domain.
void check_points(const Grid& grid, std::span<const Point> points);

// Serialization: one JSON header line, a newline, then little-endian f64
// values. Trajectories store several frames of the same shape.
void write_fields(std::ostream& out, std::span<const Field> frames, const std::string& extra_json = "{}");
std::vector<Field> read_fields(std::istream& in);
void save_fields(const std::string& path, std::span<const Field> frames, const std::string& extra_json = "{}");
std::vector<Field> load_fields(const std::string& path);

}  // namespace luno
