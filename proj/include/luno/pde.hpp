#pragma once

// Synthetic training data: pseudo-spectral ETDRK4 solvers for 1D periodic
// problems and a finite-difference RK4 solver for 2D advection-diffusion-
// reaction with out-of-distribution scenario builders.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "luno/field.hpp"
#include "luno/train.hpp"

namespace luno {

enum class Equation { burgers, hyper_diffusion, ks_conservative };

std::string to_string(Equation e);
Equation parse_equation(const std::string& s);

/// One-dimensional periodic problem
///   burgers:          u_t = -u u_x + nu u_xx
///   hyper_diffusion:  u_t = -kappa u_xxxx
///   ks_conservative:  u_t = -u u_x - u_xx - u_xxxx
struct Scenario1d {
  Equation equation = Equation::burgers;
  int n = 256;
  double length = 2.0 * 3.141592653589793;
  int n_frames = 59;
  double dt = 0.05;  // time between stored frames
  int substeps = 5;  // ETDRK4 steps per stored frame
  /// nu for Burgers, kappa for hyper-diffusion; unused for KS.
  double coefficient = 0.015;
  /// Frames integrated and discarded before the first stored frame.
  int burn_in = 0;
  /// Initial conditions: zero-mean random Fourier series over wavenumbers
  /// 1..ic_modes, scaled to max |u| = ic_amplitude.
  int ic_modes = 5;
  double ic_amplitude = 1.0;
  int n_train = 25, n_valid = 250, n_test = 250;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Defaults per equation. Hyper-diffusion picks kappa so the k = 1 mode
/// decays by 10% over the stored trajectory.
Scenario1d default_scenario(Equation e);

void to_json(nlohmann::json& j, const Scenario1d& s);
void from_json(const nlohmann::json& j, Scenario1d& s);

/// Integrates from `initial` (one channel on the scenario grid) and stores
/// n_frames frames, the first being the state after burn-in. Throws
/// std::runtime_error if max |u| exceeds 1e6.
Trajectory solve_1d(const Scenario1d& scenario, const Field& initial);

/// Same integration with an explicit number of ETDRK4 steps per frame
/// (used for self-convergence studies).
Trajectory solve_1d(const Scenario1d& scenario, const Field& initial, int substeps);

Field make_initial_1d(const Scenario1d& scenario, std::uint64_t seed);

enum class AdrVariant { base, flip, pos, pos_neg, pos_neg_flip };

std::string to_string(AdrVariant v);
AdrVariant parse_adr_variant(const std::string& s);

/// u_t + div(v u) = alpha lap(u) + R on a periodic square.
///
/// Lengths follow from the time step: the side is chosen so that the
/// diffusion number alpha dt / h^2 equals `diffusion_number`. Velocities and
/// reaction amplitudes are drawn in grid units (cells per fine step and
/// change of u per trajectory duration) and stored that way in AdrAux.
struct ScenarioAdr {
  AdrVariant variant = AdrVariant::base;
  int n = 100;
  double alpha = 0.026;
  double dt = 5e-10;
  int fine_steps = 200;
  int n_frames = 59;
  double diffusion_number = 0.2;
  int min_blobs = 1, max_blobs = 10;
  /// Blob widths as a fraction of the side, amplitudes in u units.
  double blob_width_min = 0.04, blob_width_max = 0.10;
  double blob_amp_min = 0.5, blob_amp_max = 1.0;
  /// Max Courant number |v| dt / h per velocity component.
  double max_courant = 0.15;
  double source_amp_min = 0.5, source_amp_max = 1.0;
  double sink_amp_min = 0.5, sink_amp_max = 1.0;
  /// Zero the aux channels of training trajectories (placeholder padding).
  bool zero_aux_in_train = true;
  int n_train = 50, n_valid = 50, n_test = 50;
  std::uint64_t seed = 0;

  double side() const;
  double spacing() const { return side() / n; }
  Grid grid() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ScenarioAdr& s);
void from_json(const nlohmann::json& j, ScenarioAdr& s);

/// Channels: 0, 1 velocity (Courant units), 2 reaction (u per trajectory).
struct AdrAux {
  Field fields;

  static constexpr int channels = 3;
};

AdrAux make_aux(const ScenarioAdr& scenario, std::uint64_t seed);

/// Sum of 1..10 periodic Gaussian blobs (count drawn when n_blobs <= 0).
Field make_initial_blobs(const ScenarioAdr& scenario, std::uint64_t seed, int n_blobs = 0);

/// RK4 with the compact 9-point Laplacian and flux-form central advection;
/// stored frame i is fine step floor(i * fine_steps / n_frames).
/// The returned trajectory carries `aux` unchanged.
Trajectory solve_adr(const ScenarioAdr& scenario, const Field& initial, const AdrAux& aux);

/// Right-hand side of the semi-discrete ADR system (exposed for tests).
void adr_rhs(const ScenarioAdr& scenario, const Field& u, const AdrAux& aux, Field& out);

/// Advances `u` by `steps` RK4 steps of size scenario.dt / refine.
void adr_advance(const ScenarioAdr& scenario, Field& u, const AdrAux& aux, int steps, int refine = 1);

/// Stored-frame index to fine step.
int adr_frame_step(const ScenarioAdr& scenario, int frame);

// Datasets: a directory with manifest.json and one field file per
// trajectory (plus <name>.aux.bin for auxiliary channels).

struct Dataset {
  /// Serialized scenario, written to the manifest.
  std::string scenario_json;
  std::vector<Trajectory> train, valid, test;
};

/// Generates all splits. Trajectory seeds are derive_seed(seed, {split, i}).
Dataset generate_dataset(const Scenario1d& scenario);
Dataset generate_dataset(const ScenarioAdr& scenario);

void save_dataset(const std::string& dir, const Dataset& data, const std::string& extra_manifest_json = "{}");
Dataset load_dataset(const std::string& dir);

}  // namespace luno
