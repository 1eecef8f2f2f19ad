#pragma once

// Next-step supervised training: sliding windows over trajectories, mean
// squared error, reverse-mode gradients and AdamW with a warmup + cosine
// learning-rate schedule.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "luno/field.hpp"
#include "luno/fno.hpp"

namespace luno {

/// Time-ordered solution frames plus optional time-independent auxiliary
/// channels (velocity, reaction term) that are appended to every input.
struct Trajectory {
  std::vector<Field> frames;
  std::optional<Field> aux;
  double dt = 1.0;

  void validate() const;
};

struct WindowPair {
  Field input;   // window * channels + aux channels
  Field target;  // solution channels
};

/// Stacks `frames` (oldest first) and the auxiliary channels into one input.
Field stack_window(std::span<const Field> frames, const std::optional<Field>& aux);

/// All stride-1 windows of a trajectory; pair i predicts frame i + window.
std::vector<WindowPair> windows(const Trajectory& traj, int window);

double mse_loss(const Field& pred, const Field& target);

/// Mean batch loss and its exact gradient in parameter shape.
std::pair<double, FnoModel> loss_and_grad(const FnoModel& model, std::span<const WindowPair> batch);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 4;
  double peak_lr = 1e-3;
  double warmup_fraction = 0.1;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to
/// 0 at `total` steps.
double cosine_lr(long step, long total, long warmup, double peak);

/// AdamW with decoupled weight decay on a flat parameter vector.
class AdamW {
 public:
  AdamW(std::size_t size, double beta1, double beta2, double eps, double weight_decay);
  void step(std::span<double> params, std::span<const double> grad, double lr);
  long steps() const { return t_; }

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_, wd_;
  long t_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // mean pre-update batch loss
  double lr = 0.0;    // learning rate of the last step in the epoch
};

struct FitResult {
  FnoModel model;
  std::vector<EpochRecord> history;
};

/// Trains on `groups` (one group of window pairs per trajectory). Each epoch
/// draws one pair per group, shuffles, and steps once per batch. Throws
/// std::runtime_error on a non-finite loss.
FitResult fit(FnoModel model, const std::vector<std::vector<WindowPair>>& groups, const TrainConfig& cfg,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

void write_history_csv(std::ostream& out, std::span<const EpochRecord> history);

}  // namespace luno
