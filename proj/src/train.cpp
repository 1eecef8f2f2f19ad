#include "luno/train.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "luno/rng.hpp"

namespace luno {

void Trajectory::validate() const {
  if (frames.empty()) throw std::invalid_argument("trajectory has no frames");
  if (!(dt > 0.0)) throw std::invalid_argument("trajectory dt must be positive");
  for (const auto& f : frames) {
    if (!(f.grid == frames[0].grid) || f.channels != frames[0].channels)
      throw std::invalid_argument("trajectory frames differ in shape");
  }
  if (aux && !(aux->grid == frames[0].grid)) throw std::invalid_argument("auxiliary field grid mismatch");
}

Field stack_window(std::span<const Field> frames, const std::optional<Field>& aux) {
  if (frames.empty()) throw std::invalid_argument("empty window");
  const Grid& g = frames[0].grid;
  int channels = 0;
  for (const auto& f : frames) channels += f.channels;
  if (aux) channels += aux->channels;
  Field out(g, channels);
  auto it = out.values.begin();
  for (const auto& f : frames) it = std::copy(f.values.begin(), f.values.end(), it);
  if (aux) std::copy(aux->values.begin(), aux->values.end(), it);
  return out;
}

std::vector<WindowPair> windows(const Trajectory& traj, int window) {
  traj.validate();
  if (window < 1) throw std::invalid_argument("window must be positive");
  const int len = static_cast<int>(traj.frames.size());
  if (len < window + 1)
    throw std::invalid_argument("trajectory of length " + std::to_string(len) + " is too short for window " +
                                std::to_string(window));
  std::vector<WindowPair> pairs;
  pairs.reserve(len - window);
  std::span<const Field> frames(traj.frames);
  for (int i = 0; i + window < len; ++i)
    pairs.push_back({stack_window(frames.subspan(i, window), traj.aux), traj.frames[i + window]});
  return pairs;
}

double mse_loss(const Field& pred, const Field& target) {
  if (!(pred.grid == target.grid) || pred.channels != target.channels)
    throw std::invalid_argument("mse_loss: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const double r = pred.values[i] - target.values[i];
    s += r * r;
  }
  return s / static_cast<double>(pred.values.size());
}

std::pair<double, FnoModel> loss_and_grad(const FnoModel& model, std::span<const WindowPair> batch) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  FnoModel total = FnoModel::zeros(model.config);
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& pair : batch) {
    auto [pred, hs] = forward_with_hidden(model, pair.input);
    loss += mse_loss(pred, pair.target) * inv_b;
    Field g = pred;
    const double scale = 2.0 * inv_b / static_cast<double>(pred.values.size());
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = scale * (pred.values[i] - pair.target.values[i]);
    const FnoModel gm = backward(model, hs, g);
    auto acc = flatten(total);
    const auto add = flatten(gm);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
    unflatten(total, acc);
  }
  return {loss, std::move(total)};
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("train: epochs and batch_size must be positive");
  if (peak_lr < 0.0 || weight_decay < 0.0) throw std::invalid_argument("train: negative learning rate or decay");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
    throw std::invalid_argument("train: warmup_fraction must lie in (0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},   {"batch_size", c.batch_size},     {"peak_lr", c.peak_lr},
       {"warmup_fraction", c.warmup_fraction}, {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},     {"beta2", c.beta2},               {"eps", c.eps},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.peak_lr = j.value("peak_lr", d.peak_lr);
  c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

double cosine_lr(long step, long total, long warmup, double peak) {
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total <= warmup) return peak;
  const double t = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(total - warmup));
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * t));
}

AdamW::AdamW(std::size_t size, double beta1, double beta2, double eps, double weight_decay)
    : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

void AdamW::step(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("AdamW: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * params[i]);
  }
}

FitResult fit(FnoModel model, const std::vector<std::vector<WindowPair>>& groups, const TrainConfig& cfg,
              const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (groups.empty()) throw std::invalid_argument("fit: empty dataset");
  for (const auto& g : groups)
    if (g.empty()) throw std::invalid_argument("fit: trajectory without window pairs");

  const std::size_t n_groups = groups.size();
  const long steps_per_epoch = static_cast<long>((n_groups + cfg.batch_size - 1) / cfg.batch_size);
  const long total = steps_per_epoch * cfg.epochs;
  const long warmup = std::max(1L, static_cast<long>(std::lround(cfg.warmup_fraction * static_cast<double>(total))));

  std::vector<double> theta = flatten(model);
  AdamW opt(theta.size(), cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
  FitResult result;
  std::vector<std::size_t> order(n_groups);
  std::vector<WindowPair> batch;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(cfg.seed, {0x747261696eULL, static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = 0; i < n_groups; ++i) order[i] = i;
    for (std::size_t i = n_groups; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochRecord rec{epoch + 1, 0.0, 0.0};
    for (std::size_t start = 0; start < n_groups; start += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(n_groups, start + cfg.batch_size); ++i) {
        const auto& g = groups[order[i]];
        batch.push_back(g[rng.below(g.size())]);
      }
      auto [loss, grad] = loss_and_grad(model, batch);
      if (!std::isfinite(loss))
        throw std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                 ", step " + std::to_string(step));
      rec.loss += loss / static_cast<double>(steps_per_epoch);
      rec.lr = cosine_lr(step, total, warmup, cfg.peak_lr);
      opt.step(theta, flatten(grad), rec.lr);
      unflatten(model, theta);
      ++step;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.model = std::move(model);
  return result;
}

void write_history_csv(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch,loss,lr\n";
  out.precision(17);
  for (const auto& r : history) out << r.epoch << ',' << r.loss << ',' << r.lr << '\n';
}

}  // namespace luno
