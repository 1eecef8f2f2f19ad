#pragma once

// Fourier neural operator: pointwise lifting MLP, a stack of Fourier blocks
//   z = F^{-1}[R . F[v]] + W v + b,   v' = act(z),
// and a pointwise projection MLP. The activation is applied after every
// block, including the last one.

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "luno/field.hpp"

namespace luno {

enum class Activation { gelu, relu, identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);
double activate(Activation a, double x);
double activate_derivative(Activation a, double x);

struct FnoConfig {
  int dims = 1;
  int in_channels = 1;
  int out_channels = 1;
  int hidden_channels = 18;
  int blocks = 4;
  int modes = 12;  // per spatial dimension
  Activation activation = Activation::gelu;
  int lifting_width = 36;
  int projection_width = 36;
  int padding = 0;  // zero grid points appended per dimension

  void validate() const;
  /// Checks that `grid` (before padding) is compatible with the mode count.
  void validate_grid(const Grid& grid) const;
  /// Number of retained modes per block (modes^dims).
  int mode_count() const;

  bool operator==(const FnoConfig&) const = default;
};

void to_json(nlohmann::json& j, const FnoConfig& c);
void from_json(const nlohmann::json& j, FnoConfig& c);

/// Pointwise affine layer y = W x + b.
struct Dense {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct FourierBlock {
  /// R[m][i][j] for retained mode m, output channel i, input channel j.
  std::vector<std::complex<double>> spectral;
  Eigen::MatrixXd weight;  // W, hidden x hidden
  Eigen::VectorXd bias;

  std::complex<double>& r(int m, int i, int j, int width) { return spectral[(m * width + i) * width + j]; }
  std::complex<double> r(int m, int i, int j, int width) const { return spectral[(m * width + i) * width + j]; }
};

struct FnoModel {
  FnoConfig config;
  Dense lift_in, lift_out;
  std::vector<FourierBlock> blocks;
  Dense proj_in, proj_out;

  /// Model with every parameter zero and shapes from `config`.
  static FnoModel zeros(const FnoConfig& config);

  /// Visits every parameter tensor as (name, flat real view). Complex
  /// spectral weights are viewed as interleaved (re, im) pairs.
  template <class Fn>
  void for_each_tensor(Fn&& fn);
  template <class Fn>
  void for_each_tensor(Fn&& fn) const;

  std::size_t parameter_count() const;
  /// Throws std::invalid_argument on shape mismatch or non-finite entries.
  void validate() const;

  FourierBlock& last_block() { return blocks.back(); }
  const FourierBlock& last_block() const { return blocks.back(); }
};

std::vector<double> flatten(const FnoModel& model);
void unflatten(FnoModel& model, std::span<const double> values);

/// Glorot-uniform dense weights, complex spectral weights with independent
/// N(0, 1/width^2) real and imaginary parts, zero biases.
FnoModel init(const FnoConfig& config, std::uint64_t seed);

/// The retained modes of a grid: flat half-spectrum bin indices and their
/// Hermitian weights, in mode order m = k0 * modes + k1 (2D) or m = k (1D).
struct ModeSet {
  std::vector<int> bins;
  std::vector<double> weights;
  int size() const { return static_cast<int>(bins.size()); }
};
ModeSet retained_modes(const FnoConfig& config, const Grid& grid);

/// Intermediate values of a forward pass on the (possibly padded) grid.
struct HiddenState {
  Grid grid;                        // network grid (after padding)
  Field input;                      // padded input
  Field lift_pre;                   // pre-activation of the lifting hidden layer
  std::vector<Field> block_inputs;  // v^(1) ... v^(L-1)
  std::vector<Field> block_pre;     // z^(1) ... z^(L-1)
  Field last_output;                // v^(L) = act(z^(L-1))
  Field proj_pre;                   // pre-activation of the projection hidden layer
  Field output;                     // projection output on the network grid
  /// Retained spectrum of v^(L-1): last_spectrum[m * hidden + j].
  std::vector<std::complex<double>> last_spectrum;

  const Field& last_input() const { return block_inputs.back(); }
  const Field& last_pre() const { return block_pre.back(); }
};

Field forward(const FnoModel& model, const Field& input);
/// Returns the output (cropped to the input grid) and every intermediate.
std::pair<Field, HiddenState> forward_with_hidden(const FnoModel& model, const Field& input);

/// Reverse-mode pass: gradient of <output_grad, forward(model, input)> with
/// respect to every parameter, returned in parameter shape. `output_grad`
/// lives on the unpadded input grid.
FnoModel backward(const FnoModel& model, const HiddenState& hidden, const Field& output_grad);

Field pad_field(const Field& field, int extra);
Field crop_field(const Field& field, const Grid& target);

/// Spectral convolution on the network grid:
/// out_i = irfft(sum_j R[m][i][j] rfft(in_j)[m]) over retained modes.
Field spectral_conv(const FourierBlock& block, const ModeSet& modes, const Field& in,
                    std::vector<std::complex<double>>* spectrum_out = nullptr);

// Checkpoint: `<path>.json` manifest plus `<path>.bin` with all tensors
// concatenated (offsets and counts in the manifest).
void save_model(const FnoModel& model, const std::string& path, const nlohmann::json& metadata);
FnoModel load_model(const std::string& path, nlohmann::json* metadata = nullptr);

// ---------------------------------------------------------------------------

template <class Fn>
void FnoModel::for_each_tensor(Fn&& fn) {
  auto mat = [&](const std::string& name, auto& m) { fn(name, std::span<double>(m.data(), m.size())); };
  mat("lift_in.weight", lift_in.weight);
  mat("lift_in.bias", lift_in.bias);
  mat("lift_out.weight", lift_out.weight);
  mat("lift_out.bias", lift_out.bias);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    auto& b = blocks[l];
    fn(p + "spectral", std::span<double>(reinterpret_cast<double*>(b.spectral.data()), 2 * b.spectral.size()));
    mat(p + "weight", b.weight);
    mat(p + "bias", b.bias);
  }
  mat("proj_in.weight", proj_in.weight);
  mat("proj_in.bias", proj_in.bias);
  mat("proj_out.weight", proj_out.weight);
  mat("proj_out.bias", proj_out.bias);
}

template <class Fn>
void FnoModel::for_each_tensor(Fn&& fn) const {
  const_cast<FnoModel*>(this)->for_each_tensor(
      [&](const std::string& name, std::span<double> s) { fn(name, std::span<const double>(s.data(), s.size())); });
}

}  // namespace luno
