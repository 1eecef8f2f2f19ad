#include "luno/fno.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "luno/rng.hpp"

namespace luno {

namespace {

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;

MatMap as_matrix(Field& f) { return {f.values.data(), f.points(), f.channels}; }
ConstMatMap as_matrix(const Field& f) { return {f.values.data(), f.points(), f.channels}; }

Field dense(const Dense& layer, const Field& in) {
  Field out(in.grid, static_cast<int>(layer.weight.rows()));
  auto y = as_matrix(out);
  y.noalias() = as_matrix(in) * layer.weight.transpose();
  y.rowwise() += layer.bias.transpose();
  return out;
}

Field activated(Activation a, const Field& in) {
  Field out = in;
  for (double& v : out.values) v = activate(a, v);
  return out;
}

// Multiplies `grad` in place by act'(pre).
void mul_derivative(Activation a, const Field& pre, Field& grad) {
  for (std::size_t i = 0; i < grad.values.size(); ++i) grad.values[i] *= activate_derivative(a, pre.values[i]);
}

// Accumulates the parameter gradient of a dense layer and returns the
// gradient with respect to its input.
Field dense_backward(const Eigen::MatrixXd& weight, const Field& in, const Field& dout, Eigen::MatrixXd& dweight,
                     Eigen::VectorXd& dbias) {
  const auto x = as_matrix(in);
  const auto dy = as_matrix(dout);
  dweight.noalias() += dy.transpose() * x;
  dbias.noalias() += dy.colwise().sum().transpose();
  Field din(in.grid, in.channels);
  as_matrix(din).noalias() = dy * weight;
  return din;
}

Field dense_backward(const Dense& layer, const Field& in, const Field& dout, Dense& grad) {
  return dense_backward(layer.weight, in, dout, grad.weight, grad.bias);
}

Dense zero_dense(int out, int in) { return {Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)}; }

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "relu") return Activation::relu;
  if (name == "identity" || name == "linear") return Activation::identity;
  throw std::invalid_argument("unknown activation: " + name);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::identity: return x;
  }
  return x;
}

double activate_derivative(Activation a, double x) {
  switch (a) {
    case Activation::gelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    }
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

void FnoConfig::validate() const {
  if (dims != 1 && dims != 2) throw std::invalid_argument("fno: dims must be 1 or 2");
  if (in_channels <= 0 || out_channels <= 0 || hidden_channels <= 0 || blocks <= 0 || modes <= 0 ||
      lifting_width <= 0 || projection_width <= 0)
    throw std::invalid_argument("fno: channel counts, blocks and modes must be positive");
  if (padding < 0 || padding % 2 != 0) throw std::invalid_argument("fno: padding must be even and >= 0");
}

void FnoConfig::validate_grid(const Grid& grid) const {
  if (grid.dims != dims) throw std::invalid_argument("fno: grid dimensionality does not match the model");
  const Grid g = grid.padded(padding);
  if (modes > g.last_bins()) throw std::invalid_argument("fno: modes exceed the retained real-FFT bins");
  if (dims == 2 && modes > g.n[0] / 2)
    throw std::invalid_argument("fno: modes must not exceed N/2 in the leading dimension");
}

int FnoConfig::mode_count() const { return dims == 1 ? modes : modes * modes; }

void to_json(nlohmann::json& j, const FnoConfig& c) {
  j = nlohmann::json{{"dims", c.dims},
                     {"in_channels", c.in_channels},
                     {"out_channels", c.out_channels},
                     {"hidden_channels", c.hidden_channels},
                     {"blocks", c.blocks},
                     {"modes", c.modes},
                     {"activation", to_string(c.activation)},
                     {"lifting_width", c.lifting_width},
                     {"projection_width", c.projection_width},
                     {"padding", c.padding}};
}

void from_json(const nlohmann::json& j, FnoConfig& c) {
  FnoConfig d;
  c.dims = j.value("dims", d.dims);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.out_channels = j.value("out_channels", d.out_channels);
  c.hidden_channels = j.value("hidden_channels", d.hidden_channels);
  c.blocks = j.value("blocks", d.blocks);
  c.modes = j.value("modes", d.modes);
  c.activation = parse_activation(j.value("activation", std::string("gelu")));
  c.lifting_width = j.value("lifting_width", 2 * c.hidden_channels);
  c.projection_width = j.value("projection_width", 2 * c.hidden_channels);
  c.padding = j.value("padding", d.padding);
  c.validate();
}

FnoModel FnoModel::zeros(const FnoConfig& config) {
  config.validate();
  FnoModel m;
  m.config = config;
  const int h = config.hidden_channels;
  m.lift_in = zero_dense(config.lifting_width, config.in_channels);
  m.lift_out = zero_dense(h, config.lifting_width);
  m.blocks.resize(config.blocks);
  for (auto& b : m.blocks) {
    b.spectral.assign(static_cast<std::size_t>(config.mode_count()) * h * h, {0.0, 0.0});
    b.weight = Eigen::MatrixXd::Zero(h, h);
    b.bias = Eigen::VectorXd::Zero(h);
  }
  m.proj_in = zero_dense(config.projection_width, h);
  m.proj_out = zero_dense(config.out_channels, config.projection_width);
  return m;
}

std::size_t FnoModel::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, std::span<const double> s) { n += s.size(); });
  return n;
}

void FnoModel::validate() const {
  config.validate();
  const FnoModel ref = zeros(config);
  std::vector<std::size_t> sizes;
  ref.for_each_tensor([&](const std::string&, std::span<const double> s) { sizes.push_back(s.size()); });
  std::size_t i = 0;
  bool ok = blocks.size() == ref.blocks.size();
  if (ok) {
    for_each_tensor([&](const std::string& name, std::span<const double> s) {
      if (i >= sizes.size() || s.size() != sizes[i]) ok = false;
      for (double v : s)
        if (!std::isfinite(v)) throw std::invalid_argument("fno: non-finite parameter in " + name);
      ++i;
    });
  }
  if (!ok || i != sizes.size()) throw std::invalid_argument("fno: parameter shapes inconsistent with config");
}

std::vector<double> flatten(const FnoModel& model) {
  std::vector<double> out;
  out.reserve(model.parameter_count());
  model.for_each_tensor([&](const std::string&, std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

void unflatten(FnoModel& model, std::span<const double> values) {
  if (values.size() != model.parameter_count()) throw std::invalid_argument("unflatten: size mismatch");
  std::size_t off = 0;
  model.for_each_tensor([&](const std::string&, std::span<double> s) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), s.size(), s.begin());
    off += s.size();
  });
}

FnoModel init(const FnoConfig& config, std::uint64_t seed) {
  FnoModel m = FnoModel::zeros(config);
  Rng rng(seed, {0x464e4fULL});
  auto glorot = [&](Eigen::MatrixXd& w) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
  };
  glorot(m.lift_in.weight);
  glorot(m.lift_out.weight);
  const double sd = 1.0 / config.hidden_channels;
  for (auto& b : m.blocks) {
    for (auto& r : b.spectral) {
      const double re = sd * rng.normal();
      const double im = sd * rng.normal();
      r = {re, im};
    }
    glorot(b.weight);
  }
  glorot(m.proj_in.weight);
  glorot(m.proj_out.weight);
  return m;
}

ModeSet retained_modes(const FnoConfig& config, const Grid& grid) {
  ModeSet ms;
  const int k = config.modes;
  if (grid.dims == 1) {
    for (int m = 0; m < k; ++m) ms.bins.push_back(m);
  } else {
    const int nb = grid.last_bins();
    for (int k0 = 0; k0 < k; ++k0)
      for (int k1 = 0; k1 < k; ++k1) ms.bins.push_back(k0 * nb + k1);
  }
  for (int b : ms.bins) ms.weights.push_back(bin_weight(grid, b));
  return ms;
}

Field pad_field(const Field& field, int extra) {
  if (extra == 0) return field;
  const Grid& g = field.grid;
  const Grid pg = g.padded(extra);
  Field out(pg, field.channels);
  for (int c = 0; c < field.channels; ++c) {
    if (g.dims == 1) {
      for (int i = 0; i < g.n[0]; ++i) out.at(c, i) = field.at(c, i);
    } else {
      for (int i0 = 0; i0 < g.n[0]; ++i0)
        for (int i1 = 0; i1 < g.n[1]; ++i1) out.at(c, i0 * pg.n[1] + i1) = field.at(c, i0 * g.n[1] + i1);
    }
  }
  return out;
}

Field crop_field(const Field& field, const Grid& target) {
  if (field.grid == target) return field;
  const Grid& g = field.grid;
  Field out(target, field.channels);
  for (int c = 0; c < field.channels; ++c) {
    if (g.dims == 1) {
      for (int i = 0; i < target.n[0]; ++i) out.at(c, i) = field.at(c, i);
    } else {
      for (int i0 = 0; i0 < target.n[0]; ++i0)
        for (int i1 = 0; i1 < target.n[1]; ++i1) out.at(c, i0 * target.n[1] + i1) = field.at(c, i0 * g.n[1] + i1);
    }
  }
  return out;
}

Field spectral_conv(const FourierBlock& block, const ModeSet& modes, const Field& in,
                    std::vector<std::complex<double>>* spectrum_out) {
  const Grid& g = in.grid;
  const int d = in.channels;
  const int nm = modes.size();
  std::vector<Complex> buf(g.bins());
  std::vector<Complex> h(static_cast<std::size_t>(nm) * d);
  for (int j = 0; j < d; ++j) {
    rfft(g, in.channel(j), buf);
    for (int m = 0; m < nm; ++m) h[m * d + j] = buf[modes.bins[m]];
  }
  Field out(g, d);
  for (int i = 0; i < d; ++i) {
    std::fill(buf.begin(), buf.end(), Complex{});
    for (int m = 0; m < nm; ++m) {
      Complex acc{};
      for (int j = 0; j < d; ++j) acc += block.r(m, i, j, d) * h[m * d + j];
      buf[modes.bins[m]] = acc;
    }
    irfft(g, buf, out.channel(i));
  }
  if (spectrum_out) *spectrum_out = std::move(h);
  return out;
}

std::pair<Field, HiddenState> forward_with_hidden(const FnoModel& model, const Field& input) {
  const FnoConfig& cfg = model.config;
  if (input.channels != cfg.in_channels) throw std::invalid_argument("fno: input channel count mismatch");
  cfg.validate_grid(input.grid);
  HiddenState hs;
  hs.input = pad_field(input, cfg.padding);
  hs.grid = hs.input.grid;
  const ModeSet modes = retained_modes(cfg, hs.grid);

  hs.lift_pre = dense(model.lift_in, hs.input);
  Field v = dense(model.lift_out, activated(cfg.activation, hs.lift_pre));
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& b = model.blocks[l];
    const bool last = l + 1 == model.blocks.size();
    Field z = spectral_conv(b, modes, v, last ? &hs.last_spectrum : nullptr);
    auto zm = as_matrix(z);
    zm.noalias() += as_matrix(v) * b.weight.transpose();
    zm.rowwise() += b.bias.transpose();
    hs.block_inputs.push_back(std::move(v));
    v = activated(cfg.activation, z);
    hs.block_pre.push_back(std::move(z));
  }
  hs.last_output = v;
  hs.proj_pre = dense(model.proj_in, v);
  hs.output = dense(model.proj_out, activated(cfg.activation, hs.proj_pre));
  Field out = crop_field(hs.output, input.grid);
  return {std::move(out), std::move(hs)};
}

Field forward(const FnoModel& model, const Field& input) { return forward_with_hidden(model, input).first; }

FnoModel backward(const FnoModel& model, const HiddenState& hs, const Field& output_grad) {
  const FnoConfig& cfg = model.config;
  const Activation act = cfg.activation;
  FnoModel grad = FnoModel::zeros(cfg);
  const Grid& g = hs.grid;
  const ModeSet modes = retained_modes(cfg, g);
  const int nm = modes.size();
  const double npts = g.points();

  Field dout = pad_field(output_grad, cfg.padding);
  if (!(dout.grid == g) || dout.channels != cfg.out_channels)
    throw std::invalid_argument("fno backward: output gradient shape mismatch");

  Field dhid = dense_backward(model.proj_out, activated(act, hs.proj_pre), dout, grad.proj_out);
  mul_derivative(act, hs.proj_pre, dhid);
  Field dv = dense_backward(model.proj_in, hs.last_output, dhid, grad.proj_in);

  std::vector<Complex> buf(g.bins());
  for (int l = static_cast<int>(model.blocks.size()) - 1; l >= 0; --l) {
    const auto& blk = model.blocks[l];
    auto& gblk = grad.blocks[l];
    const Field& vin = hs.block_inputs[l];
    const int d = vin.channels;
    Field dz = dv;
    mul_derivative(act, hs.block_pre[l], dz);

    Field dvin = dense_backward(blk.weight, vin, dz, gblk.weight, gblk.bias);

    std::vector<Complex> h(static_cast<std::size_t>(nm) * d), gy(static_cast<std::size_t>(nm) * d);
    for (int j = 0; j < d; ++j) {
      rfft(g, vin.channel(j), buf);
      for (int m = 0; m < nm; ++m) h[m * d + j] = buf[modes.bins[m]];
    }
    // Adjoint of the truncated inverse transform.
    for (int i = 0; i < d; ++i) {
      rfft(g, dz.channel(i), buf);
      for (int m = 0; m < nm; ++m) gy[m * d + i] = buf[modes.bins[m]] * (modes.weights[m] / npts);
    }
    std::vector<double> tmp(g.points());
    for (int j = 0; j < d; ++j) {
      std::fill(buf.begin(), buf.end(), Complex{});
      for (int m = 0; m < nm; ++m) {
        Complex acc{};
        for (int i = 0; i < d; ++i) {
          gblk.r(m, i, j, d) += gy[m * d + i] * std::conj(h[m * d + j]);
          acc += std::conj(blk.r(m, i, j, d)) * gy[m * d + i];
        }
        buf[modes.bins[m]] = acc / modes.weights[m];
      }
      // Adjoint of the truncated forward transform.
      irfft(g, buf, tmp);
      auto col = dvin.channel(j);
      for (int p = 0; p < g.points(); ++p) col[p] += npts * tmp[p];
    }
    dv = std::move(dvin);
  }

  Field dlift = dense_backward(model.lift_out, activated(act, hs.lift_pre), dv, grad.lift_out);
  mul_derivative(act, hs.lift_pre, dlift);
  dense_backward(model.lift_in, hs.input, dlift, grad.lift_in);
  return grad;
}

void save_model(const FnoModel& model, const std::string& path, const nlohmann::json& metadata) {
  nlohmann::json manifest;
  manifest["format"] = "luno-fno-checkpoint";
  manifest["config"] = model.config;
  manifest["metadata"] = metadata;
  std::ofstream bin(path + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open for writing: " + path + ".bin");
  std::size_t offset = 0;
  nlohmann::json tensors = nlohmann::json::array();
  model.for_each_tensor([&](const std::string& name, std::span<const double> s) {
    tensors.push_back({{"name", name}, {"offset", offset}, {"count", s.size()}});
    bin.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.size_bytes()));
    offset += s.size();
  });
  if (!bin) throw std::runtime_error("write failed: " + path + ".bin");
  manifest["tensors"] = tensors;
  std::ofstream js(path + ".json");
  js << manifest.dump(2) << '\n';
  if (!js) throw std::runtime_error("write failed: " + path + ".json");
}

FnoModel load_model(const std::string& path, nlohmann::json* metadata) {
  std::ifstream js(path + ".json");
  if (!js) throw std::runtime_error("missing model checkpoint: " + path + ".json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt model manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "luno-fno-checkpoint") throw std::runtime_error("not a model checkpoint: " + path);
  FnoModel model = FnoModel::zeros(manifest.at("config").get<FnoConfig>());
  std::ifstream bin(path + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("missing model buffer: " + path + ".bin");
  const auto& tensors = manifest.at("tensors");
  std::size_t i = 0;
  model.for_each_tensor([&](const std::string& name, std::span<double> s) {
    if (i >= tensors.size() || tensors[i].at("name") != name || tensors[i].at("count").get<std::size_t>() != s.size())
      throw std::runtime_error("model checkpoint does not match its config at tensor " + name);
    bin.seekg(static_cast<std::streamoff>(tensors[i].at("offset").get<std::size_t>() * sizeof(double)));
    bin.read(reinterpret_cast<char*>(s.data()), static_cast<std::streamsize>(s.size_bytes()));
    if (!bin) throw std::runtime_error("truncated model buffer: " + path + ".bin");
    ++i;
  });
  model.validate();
  if (metadata) *metadata = manifest.value("metadata", nlohmann::json::object());
  return model;
}

}  // namespace luno
