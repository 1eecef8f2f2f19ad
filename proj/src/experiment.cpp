#include "luno/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "luno/linearization.hpp"
#include "luno/luno.hpp"
#include "luno/rng.hpp"

#ifndef LUNO_PROFILE_DIR
#define LUNO_PROFILE_DIR "profiles"
#endif

namespace luno {

namespace fs = std::filesystem;

namespace {

// Stream keys for derive_seed, spelled as ASCII for readability.
constexpr std::uint64_t kKeyInit = 0x696e6974;        // "init"
constexpr std::uint64_t kKeyTrain = 0x747261696e;     // "train"
constexpr std::uint64_t kKeyPairs = 0x7061697273;     // "pairs"
constexpr std::uint64_t kKeySamples = 0x73616d70;     // "samp"
constexpr std::uint64_t kKeyGgn = 0x67676e;           // "ggn"

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  return out;
}

bool is_adr(const nlohmann::json& scenario) { return scenario.value("kind", std::string("1d")) == "adr"; }

std::string hash_of(const nlohmann::json& j) { return stable_hash(j.dump()); }

void check_stage(const nlohmann::json& meta, const char* key, const std::string& expected, const std::string& what) {
  const std::string got = meta.value(key, std::string());
  if (got != expected)
    throw std::runtime_error(what + " was produced under a different configuration (" + key + " " + got +
                             " != " + expected + "); rerun the earlier stages");
}

fs::path member_path(const ExperimentConfig& cfg, int k) {
  return fs::path(cfg.out) / "models" / ("member_" + std::to_string(k));
}

}  // namespace

std::string stable_hash(const std::string& text) {
  // FNV-1a, 64 bit.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string ExperimentConfig::hash() const {
  nlohmann::json j = resolved;
  j.erase("out");
  return hash_of(j);
}

std::string ExperimentConfig::data_hash() const { return hash_of({{"scenario", scenario}, {"seed", seed}}); }

std::string ExperimentConfig::model_hash() const {
  return hash_of({{"data", data_hash()},
                  {"model", model},
                  {"train", train},
                  {"window", window},
                  {"ensemble_members", ensemble_members}});
}

std::string ExperimentConfig::belief_hash() const {
  return hash_of({{"model", model_hash()},
                  {"rank", belief_rank},
                  {"noise_var", noise_var},
                  {"max_pairs", ggn_max_pairs},
                  {"method", static_cast<int>(ggn_method)}});
}

nlohmann::json provenance(const ExperimentConfig& cfg, const std::string& stage_hash) {
  return {{"config_hash", cfg.hash()}, {"stage_hash", stage_hash}, {"seed", cfg.seed}, {"profile", cfg.profile}};
}

std::string profile_directory() {
  if (const char* env = std::getenv("LUNO_PROFILES")) return env;
  return LUNO_PROFILE_DIR;
}

ExperimentConfig make_config(const nlohmann::json& resolved) {
  ExperimentConfig c;
  c.resolved = resolved;
  c.profile = resolved.value("profile", std::string("custom"));
  c.seed = resolved.value("seed", std::uint64_t{0});
  c.out = resolved.value("out", std::string("run"));

  c.scenario = resolved.at("scenario");
  c.scenario["seed"] = c.seed;
  int aux_channels = 0;
  int dims = 1;
  if (is_adr(c.scenario)) {
    c.scenario = nlohmann::json(c.scenario.get<ScenarioAdr>());
    aux_channels = AdrAux::channels;
    dims = 2;
  } else {
    c.scenario = nlohmann::json(c.scenario.get<Scenario1d>());
  }

  c.window = resolved.value("window", c.window);
  if (c.window < 1) throw std::invalid_argument("config: window must be positive");
  nlohmann::json model = resolved.value("model", nlohmann::json::object());
  model["dims"] = dims;
  model["in_channels"] = c.window + aux_channels;
  model["out_channels"] = 1;
  c.model = model.get<FnoConfig>();
  c.train = resolved.value("train", nlohmann::json::object()).get<TrainConfig>();
  c.train.seed = c.seed;
  c.ensemble_members = resolved.value("ensemble_members", c.ensemble_members);
  if (c.ensemble_members < 1) throw std::invalid_argument("config: ensemble_members must be >= 1");

  const auto b = resolved.value("belief", nlohmann::json::object());
  c.belief_rank = b.value("rank", c.belief_rank);
  c.noise_var = b.value("noise_var", c.noise_var);
  c.ggn_max_pairs = b.value("max_pairs", c.ggn_max_pairs);
  const std::string m = b.value("method", std::string("automatic"));
  if (m == "automatic") c.ggn_method = EigenMethod::automatic;
  else if (m == "gram") c.ggn_method = EigenMethod::gram;
  else if (m == "lanczos") c.ggn_method = EigenMethod::lanczos;
  else throw std::invalid_argument("config: unknown belief.method " + m);
  if (c.belief_rank < 1 || !(c.noise_var > 0.0)) throw std::invalid_argument("config: bad belief settings");

  c.methods = resolved.value("methods", std::vector<std::string>{"input_perturbations", "ensemble", "sample_iso",
                                                                   "luno_iso", "sample_la", "luno_la"});
  for (const auto& name : c.methods)
    if (name != "input_perturbations" && name != "ensemble" && name != "sample_iso" && name != "luno_iso" &&
        name != "sample_la" && name != "luno_la")
      throw std::invalid_argument("config: unknown method " + name);

  const auto cal = resolved.value("calibration", nlohmann::json::object());
  c.calib_points = cal.value("n_points", c.calib_points);
  c.calib_decades = cal.value("decades", c.calib_decades);
  c.calib_pairs = cal.value("valid_pairs", c.calib_pairs);
  c.sample_calib_points = cal.value("sample_n_points", c.calib_points);
  c.sample_calib_decades = cal.value("sample_decades", c.calib_decades);
  c.sample_calib_pairs = cal.value("sample_valid_pairs", c.calib_pairs);
  c.sample_calib_samples = cal.value("sample_samples", c.sample_calib_samples);
  const auto ev = resolved.value("evaluation", nlohmann::json::object());
  c.test_pairs = ev.value("test_pairs", c.test_pairs);
  c.n_samples = ev.value("n_samples", c.n_samples);
  if (c.calib_points < 1 || c.sample_calib_points < 1 || c.calib_pairs < 1 || c.sample_calib_pairs < 1 ||
      c.test_pairs < 1 || c.n_samples < 2 || c.sample_calib_samples < 2)
    throw std::invalid_argument("config: calibration/evaluation sizes must be positive (samples >= 2)");
  const auto ro = resolved.value("rollout", nlohmann::json::object());
  c.rollout_trajectories = ro.value("trajectories", c.rollout_trajectories);
  c.rollout_steps = ro.value("n_steps", c.rollout_steps);
  c.benchmark_steps = resolved.value("benchmark", nlohmann::json::object()).value("n_steps", c.benchmark_steps);
  return c;
}

ExperimentConfig load_config(const std::string& profile, const std::string& config_path,
                             const nlohmann::json& overrides) {
  nlohmann::json resolved = nlohmann::json::object();
  if (!profile.empty()) {
    fs::path p = profile;
    if (!fs::is_regular_file(p)) p = fs::path(profile_directory()) / (profile + ".json");
    if (!fs::is_regular_file(p)) throw std::runtime_error("unknown profile: " + profile);
    resolved = read_json(p);
  }
  if (!config_path.empty()) resolved.merge_patch(read_json(config_path));
  resolved.merge_patch(overrides);
  if (!resolved.contains("scenario")) throw std::invalid_argument("config: missing scenario");
  return make_config(resolved);
}

PairSplit make_pairs(const ExperimentConfig& cfg, const Dataset& data) {
  PairSplit s;
  for (const auto& t : data.train) s.train_groups.push_back(windows(t, cfg.window));
  auto draw = [&](const std::vector<Trajectory>& trajs, int count, std::uint64_t split) {
    std::vector<WindowPair> out;
    if (trajs.empty()) return out;
    for (int i = 0; i < count; ++i) {
      const Trajectory& t = trajs[i % trajs.size()];
      const int n_windows = static_cast<int>(t.frames.size()) - cfg.window;
      if (n_windows < 1) throw std::invalid_argument("trajectory too short for the window");
      Rng rng(cfg.seed, {kKeyPairs, split, static_cast<std::uint64_t>(i)});
      const int start = static_cast<int>(rng.below(n_windows));
      out.push_back({stack_window(std::span<const Field>(t.frames).subspan(start, cfg.window), t.aux),
                     t.frames[start + cfg.window]});
    }
    return out;
  };
  s.valid = draw(data.valid, cfg.calib_pairs, 1);
  s.test = draw(data.test, cfg.test_pairs, 2);
  return s;
}

Dataset stage_generate(const ExperimentConfig& cfg) {
  Dataset d = is_adr(cfg.scenario) ? generate_dataset(cfg.scenario.get<ScenarioAdr>())
                                   : generate_dataset(cfg.scenario.get<Scenario1d>());
  save_dataset((fs::path(cfg.out) / "data").string(), d, provenance(cfg, cfg.data_hash()).dump());
  return d;
}

namespace {

Dataset load_data(const ExperimentConfig& cfg) {
  const fs::path dir = fs::path(cfg.out) / "data";
  const auto manifest = read_json(dir / "manifest.json");
  check_stage(manifest.value("meta", nlohmann::json::object()), "stage_hash", cfg.data_hash(), "dataset");
  return load_dataset(dir.string());
}

}  // namespace

std::vector<FitResult> stage_train(const ExperimentConfig& cfg) {
  const Dataset data = load_data(cfg);
  const PairSplit pairs = make_pairs(cfg, data);
  std::vector<FitResult> results;
  fs::create_directories(fs::path(cfg.out) / "models");
  for (int k = 0; k < cfg.ensemble_members; ++k) {
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, {kKeyTrain, static_cast<std::uint64_t>(k)});
    FnoModel model = init(cfg.model, derive_seed(cfg.seed, {kKeyInit, static_cast<std::uint64_t>(k)}));
    FitResult r = fit(std::move(model), pairs.train_groups, tc);
    nlohmann::json meta = provenance(cfg, cfg.model_hash());
    meta["member"] = k;
    meta["final_loss"] = r.history.empty() ? 0.0 : r.history.back().loss;
    save_model(r.model, member_path(cfg, k).string(), meta);
    auto out = open_out(fs::path(cfg.out) / "models" / ("loss_" + std::to_string(k) + ".csv"));
    out << "# config_hash=" << cfg.hash() << " seed=" << cfg.seed << " member=" << k << '\n';
    write_history_csv(out, r.history);
    results.push_back(std::move(r));
  }
  return results;
}

Artifacts load_artifacts(const ExperimentConfig& cfg, bool need_models, bool need_beliefs, bool need_calibration) {
  Artifacts a;
  a.data = load_data(cfg);
  if (need_models || need_beliefs) {
    for (int k = 0; k < cfg.ensemble_members; ++k) {
      nlohmann::json meta;
      auto m = std::make_shared<const FnoModel>(load_model(member_path(cfg, k).string(), &meta));
      check_stage(meta, "stage_hash", cfg.model_hash(), "model member " + std::to_string(k));
      a.members.push_back(std::move(m));
    }
  }
  if (need_beliefs) {
    for (auto [name, slot] : {std::pair{"belief_iso", &a.belief_iso}, std::pair{"belief_la", &a.belief_la}}) {
      const fs::path p = fs::path(cfg.out) / name;
      if (!fs::exists(p.string() + ".json")) throw std::runtime_error("missing " + p.string() + "; run fit-belief");
      nlohmann::json meta;
      *slot = load_belief(p.string(), &meta);
      check_stage(meta, "stage_hash", cfg.belief_hash(), name);
    }
  }
  const fs::path cal = fs::path(cfg.out) / "calibration.json";
  if (fs::exists(cal)) {
    a.calibration = read_json(cal);
    check_stage(a.calibration.value("provenance", nlohmann::json::object()), "config_hash", cfg.hash(),
                "calibration");
  } else if (need_calibration) {
    throw std::runtime_error("missing " + cal.string() + "; run calibrate");
  }
  return a;
}

nlohmann::json stage_fit_belief(const ExperimentConfig& cfg) {
  const Artifacts a = load_artifacts(cfg, true, false, false);
  const PairSplit pairs = make_pairs(cfg, a.data);
  const auto& model = a.members.front();
  const Eigen::VectorXd mu = theta_last(*model);

  std::vector<const WindowPair*> all;
  for (const auto& g : pairs.train_groups)
    for (const auto& p : g) all.push_back(&p);
  const double n_data = static_cast<double>(all.size());
  if (cfg.ggn_max_pairs > 0 && static_cast<int>(all.size()) > cfg.ggn_max_pairs) {
    // Seeded partial Fisher-Yates for the minibatch.
    Rng rng(cfg.seed, {kKeyGgn});
    for (int i = 0; i < cfg.ggn_max_pairs; ++i)
      std::swap(all[i], all[i + rng.below(all.size() - i)]);
    all.resize(cfg.ggn_max_pairs);
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<LastBlockLinearization> lins;
  lins.reserve(all.size());
  for (const WindowPair* p : all) {
    lins.emplace_back(model, p->input);
    lins.back().release_intermediates();
  }
  GgnOptions opt;
  opt.rank = std::min<int>(cfg.belief_rank, static_cast<int>(mu.size()));
  opt.noise_var = cfg.noise_var;
  opt.method = cfg.ggn_method;
  opt.seed = derive_seed(cfg.seed, {kKeyGgn, 1});
  const GgnResult ggn = ggn_lowrank(lins, opt);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  nlohmann::json meta = provenance(cfg, cfg.belief_hash());
  meta["ggn"] = {{"method", ggn.method},         {"rank", opt.rank},
                 {"converged", ggn.converged},   {"residual", ggn.residual},
                 {"iterations", ggn.iterations}, {"pairs", lins.size()},
                 {"n_data", n_data},             {"seconds", seconds},
                 {"top_eigenvalue", ggn.eigenvalues.size() ? ggn.eigenvalues(0) : 0.0}};
  save_belief(WeightBelief::isotropic(mu, 1.0), (fs::path(cfg.out) / "belief_iso").string(), meta);
  save_belief(WeightBelief::low_rank_laplace(mu, ggn.factor, 1.0, n_data), (fs::path(cfg.out) / "belief_la").string(),
              meta);
  return meta;
}

std::vector<std::unique_ptr<UqMethod>> make_methods(const ExperimentConfig& cfg, const Artifacts& a,
                                                    bool apply_calibration, int n_samples) {
  if (a.members.empty()) throw std::runtime_error("no trained models; run train");
  std::vector<std::unique_ptr<UqMethod>> out;
  for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
    const std::string& name = cfg.methods[i];
    const std::uint64_t seed = derive_seed(cfg.seed, {kKeySamples, i});
    const auto& base = a.members.front();
    if (name == "input_perturbations") {
      out.push_back(std::make_unique<InputPerturbationMethod>(base, 1e-2, n_samples, seed));
    } else if (name == "ensemble") {
      if (a.members.size() < 2) throw std::invalid_argument("ensemble method needs ensemble_members >= 2");
      std::vector<FnoModel> members;
      for (const auto& m : a.members) members.push_back(*m);
      out.push_back(std::make_unique<DeepEnsembleMethod>(std::move(members)));
    } else {
      const bool la = name.ends_with("_la");
      const auto& belief = la ? a.belief_la : a.belief_iso;
      if (!belief) throw std::runtime_error("missing belief for " + name + "; run fit-belief");
      if (name.starts_with("luno"))
        out.push_back(std::make_unique<LunoMethod>(base, *belief));
      else
        out.push_back(std::make_unique<SampleMethod>(base, *belief, n_samples, seed));
    }
    if (apply_calibration && out.back()->has_scale() && a.calibration.contains("methods") &&
        a.calibration["methods"].contains(name))
      out.back()->set_scale(a.calibration["methods"][name].at("best").get<double>());
  }
  return out;
}

nlohmann::json stage_calibrate(const ExperimentConfig& cfg) {
  const Artifacts a = load_artifacts(cfg, true, true, false);
  const PairSplit pairs = make_pairs(cfg, a.data);
  if (pairs.valid.empty()) throw std::runtime_error("calibration needs validation trajectories");
  auto methods = make_methods(cfg, a, false, cfg.sample_calib_samples);

  // Grid centres: moment matching for the linearized methods, reused by
  // their sample-based counterparts; inputs get 1% of their RMS.
  std::map<std::string, double> centers;
  for (const char* kind : {"iso", "la"}) {
    LunoMethod probe(a.members.front(), std::string(kind) == "iso" ? *a.belief_iso : *a.belief_la);
    const double c = moment_matched_scale(probe, pairs.valid);
    centers[std::string("luno_") + kind] = c;
    centers[std::string("sample_") + kind] = c;
  }
  double ms = 0.0;
  std::size_t count = 0;
  for (const auto& p : pairs.valid)
    for (int i = 0; i < cfg.window * p.target.points(); ++i) {
      ms += p.input.values[i] * p.input.values[i];
      ++count;
    }
  centers["input_perturbations"] = 1e-2 * std::sqrt(ms / static_cast<double>(count));

  nlohmann::json result;
  result["provenance"] = provenance(cfg, cfg.belief_hash());
  result["convention"] = "scale: variance for *_iso, prior precision for *_la, input std for input_perturbations";
  for (auto& m : methods) {
    if (!m->has_scale()) continue;
    const bool sampled = m->name() == "input_perturbations" || m->name().starts_with("sample");
    const std::size_t n_pairs = std::min<std::size_t>(pairs.valid.size(), sampled ? cfg.sample_calib_pairs : cfg.calib_pairs);
    const auto t0 = std::chrono::steady_clock::now();
    const CalibrationResult r =
        calibrate(*m, std::span<const WindowPair>(pairs.valid).first(n_pairs), centers.at(m->name()),
                  sampled ? cfg.sample_calib_points : cfg.calib_points,
                  sampled ? cfg.sample_calib_decades : cfg.calib_decades);
    const bool at_edge = r.grid.size() > 1 && (r.best_index == 0 || r.best_index + 1 == static_cast<int>(r.grid.size()));
    if (at_edge) std::fprintf(stderr, "warning: %s calibration optimum lies on the grid boundary\n", m->name().c_str());
    result["methods"][m->name()] = {{"at_boundary", at_edge},
        {"best", r.best},       {"best_index", r.best_index},
        {"center", centers.at(m->name())}, {"grid", r.grid},
        {"nll", r.curve},       {"pairs", n_pairs},
        {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
  }
  write_json(fs::path(cfg.out) / "calibration.json", result);
  return result;
}

namespace {

void write_metrics(const ExperimentConfig& cfg, const std::vector<EvalResult>& results) {
  auto csv = open_out(fs::path(cfg.out) / "metrics.csv");
  csv << "method,dataset,rmse,chi2,nll,n_pairs,config_hash,seed\n";
  nlohmann::json j;
  j["provenance"] = provenance(cfg, cfg.belief_hash());
  j["nll_convention"] = "per-point mean marginal NLL, averaged over test pairs";
  for (const auto& r : results) {
    const auto& s = r.summary;
    csv << s.method << ',' << s.dataset << ',' << s.rmse << ',' << s.chi2 << ',' << s.nll << ',' << s.n_pairs << ','
        << cfg.hash() << ',' << cfg.seed << '\n';
    nlohmann::json per = nlohmann::json::array();
    for (const auto& p : r.pairs) per.push_back({{"rmse", p.rmse}, {"nll", p.nll}, {"chi2", p.chi2}});
    j["methods"][s.method] = {{"rmse", s.rmse}, {"nll", s.nll}, {"chi2", s.chi2}, {"n_pairs", s.n_pairs},
                              {"pairs", per}};
  }
  write_json(fs::path(cfg.out) / "metrics.json", j);
}

std::string dataset_tag(const ExperimentConfig& cfg) {
  return is_adr(cfg.scenario) ? "adr_" + cfg.scenario.value("variant", std::string("base"))
                              : cfg.scenario.value("equation", std::string("1d"));
}

}  // namespace

std::vector<MetricRecord> stage_evaluate(const ExperimentConfig& cfg) {
  const Artifacts a = load_artifacts(cfg, true, true, true);
  const PairSplit pairs = make_pairs(cfg, a.data);
  if (pairs.test.empty()) throw std::runtime_error("evaluation needs test trajectories");
  const auto methods = make_methods(cfg, a, true, cfg.n_samples);
  std::vector<EvalResult> results;
  std::vector<MetricRecord> records;
  for (const auto& m : methods) {
    results.push_back(evaluate(*m, pairs.test, dataset_tag(cfg)));
    records.push_back(results.back().summary);
  }
  write_metrics(cfg, results);
  return records;
}

std::vector<std::pair<std::string, std::vector<PairMetrics>>> stage_rollout(const ExperimentConfig& cfg,
                                                                            int n_steps) {
  const Artifacts a = load_artifacts(cfg, true, true, true);
  if (a.data.test.empty()) throw std::runtime_error("rollout needs test trajectories");
  const auto methods = make_methods(cfg, a, true, cfg.n_samples);
  const int available = static_cast<int>(a.data.test.front().frames.size()) - cfg.window;
  if (n_steps <= 0) n_steps = cfg.rollout_steps > 0 ? cfg.rollout_steps : available;
  n_steps = std::min(n_steps, available);
  const int n_traj = std::min<int>(cfg.rollout_trajectories, static_cast<int>(a.data.test.size()));

  std::vector<std::pair<std::string, std::vector<PairMetrics>>> out;
  auto csv = open_out(fs::path(cfg.out) / "rollout.csv");
  csv << "method,step,rmse,nll,chi2,trajectories,config_hash,seed\n";
  for (const auto& m : methods) {
    std::vector<PairMetrics> mean(n_steps);
    for (int t = 0; t < n_traj; ++t) {
      const RolloutResult r = rollout(*m, a.data.test[t], cfg.window, n_steps);
      for (int s = 0; s < n_steps; ++s) {
        mean[s].rmse += r.metrics[s].rmse / n_traj;
        mean[s].nll += r.metrics[s].nll / n_traj;
        mean[s].chi2 += r.metrics[s].chi2 / n_traj;
      }
    }
    for (int s = 0; s < n_steps; ++s)
      csv << m->name() << ',' << s + 1 << ',' << mean[s].rmse << ',' << mean[s].nll << ',' << mean[s].chi2 << ','
          << n_traj << ',' << cfg.hash() << ',' << cfg.seed << '\n';
    out.emplace_back(m->name(), std::move(mean));
  }
  return out;
}

nlohmann::json stage_sample(const ExperimentConfig& cfg, const std::string& method, int pair_index, int n_samples,
                            const std::string& points_path) {
  if (method != "luno_iso" && method != "luno_la") throw std::invalid_argument("sample: method must be luno_iso or luno_la");
  const Artifacts a = load_artifacts(cfg, true, true, false);
  const PairSplit pairs = make_pairs(cfg, a.data);
  if (pair_index < 0 || pair_index >= static_cast<int>(pairs.test.size()))
    throw std::invalid_argument("sample: pair index out of range");
  WeightBelief belief = method == "luno_iso" ? *a.belief_iso : *a.belief_la;
  if (a.calibration.contains("methods") && a.calibration["methods"].contains(method))
    belief = belief.with_scale(a.calibration["methods"][method].at("best").get<double>());
  const WindowPair& pair = pairs.test[pair_index];
  const PredictiveGp gp(a.members.front(), belief, pair.input);
  const auto samples = gp.sample_functions(n_samples, derive_seed(cfg.seed, {kKeySamples, 0x5e}));

  const fs::path dir = fs::path(cfg.out) / "samples";
  fs::create_directories(dir);
  const std::string prov = provenance(cfg, cfg.belief_hash()).dump();
  std::vector<Field> grid_samples;
  for (const auto& s : samples) grid_samples.push_back(s.evaluate_grid());
  const std::string stem = method + "_" + std::to_string(pair_index);
  if (!grid_samples.empty()) save_fields((dir / (stem + "_samples.bin")).string(), grid_samples, prov);
  const Field summary[3] = {gp.mean_grid(), gp.marginal_std_grid(), pair.target};
  save_fields((dir / (stem + "_mean_std_target.bin")).string(), summary, prov);

  nlohmann::json out;
  out["provenance"] = provenance(cfg, cfg.belief_hash());
  out["method"] = method;
  out["pair_index"] = pair_index;
  out["scale"] = belief.scale();
  out["n_samples"] = n_samples;
  out["files"] = {stem + "_samples.bin", stem + "_mean_std_target.bin"};
  if (!points_path.empty()) {
    const auto pts_json = read_json(points_path);
    std::vector<Point> pts;
    for (const auto& p : pts_json) {
      const auto v = p.get<std::vector<double>>();
      if (v.empty() || v.size() > 2) throw std::invalid_argument("sample: points must be [x] or [x, y]");
      pts.push_back({v[0], v.size() > 1 ? v[1] : 0.0});
    }
    out["points"] = pts_json;
    out["mean"] = gp.mean(pts);
    out["std"] = gp.marginal_std(pts);
    nlohmann::json vals = nlohmann::json::array();
    for (const auto& s : samples) vals.push_back(s.evaluate(pts));
    out["samples"] = vals;
  }
  write_json(dir / (stem + ".json"), out);
  return out;
}

nlohmann::json stage_benchmark(const ExperimentConfig& cfg, int n_steps) {
  const Artifacts a = load_artifacts(cfg, true, true, false);
  if (a.data.test.empty()) throw std::runtime_error("benchmark needs a test trajectory");
  const Trajectory& traj = a.data.test.front();
  const int available = static_cast<int>(traj.frames.size()) - cfg.window;
  if (n_steps <= 0) n_steps = cfg.benchmark_steps > 0 ? cfg.benchmark_steps : available;
  n_steps = std::min(n_steps, available);
  auto methods = make_methods(cfg, a, true, cfg.n_samples);

  nlohmann::json out;
  out["provenance"] = provenance(cfg, cfg.belief_hash());
  out["n_steps"] = n_steps;
  out["n_samples"] = cfg.n_samples;
  const fs::path belief_meta = fs::path(cfg.out) / "belief_la.json";
  if (fs::exists(belief_meta))
    out["construction_seconds"]["ggn"] = read_json(belief_meta)["metadata"]["ggn"].value("seconds", 0.0);
  for (const auto& m : methods) {
    const auto t0 = std::chrono::steady_clock::now();
    rollout(*m, traj, cfg.window, n_steps);
    out["rollout_seconds"][m->name()] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  write_json(fs::path(cfg.out) / "benchmark.json", out);
  return out;
}

}  // namespace luno
