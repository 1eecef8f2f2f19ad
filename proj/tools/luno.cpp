// Experiment driver. Every subcommand resolves the same configuration
// (profile, then --config, then --set overrides) and works on the stage
// artifacts in --out.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "luno/experiment.hpp"

namespace {

struct Options {
  std::string profile = "desk";
  std::string config;
  std::string out;
  long long seed = -1;
  std::vector<std::string> sets;
};

// "a.b.c=value" becomes {"a": {"b": {"c": value}}}; the value is parsed as
// JSON when possible and kept as a string otherwise.
nlohmann::json parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got " + text);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text.substr(eq + 1));
  } catch (const nlohmann::json::parse_error&) {
    value = text.substr(eq + 1);
  }
  nlohmann::json::json_pointer ptr;
  std::string key = text.substr(0, eq);
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    ptr /= key.substr(start, dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  nlohmann::json patch;
  patch[ptr] = value;
  return patch;
}

luno::ExperimentConfig resolve(const Options& o) {
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& s : o.sets) overrides.merge_patch(parse_override(s));
  if (o.seed >= 0) overrides["seed"] = o.seed;
  if (!o.out.empty()) overrides["out"] = o.out;
  return luno::load_config(o.profile, o.config, overrides);
}

void print_metrics(const std::vector<luno::MetricRecord>& rows) {
  std::printf("%-20s %-10s %12s %12s %12s\n", "method", "dataset", "rmse", "nll", "chi2");
  for (const auto& r : rows)
    std::printf("%-20s %-10s %12.5g %12.5g %12.5g\n", r.method.c_str(), r.dataset.c_str(), r.rmse, r.nll, r.chi2);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linearized uncertainty for neural operators: experiment driver"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--profile", opt.profile, "Profile name (desk, paper) or path to a profile JSON")->capture_default_str();
  app.add_option("--config", opt.config, "JSON config merged over the profile")->check(CLI::ExistingFile);
  app.add_option("--seed", opt.seed, "Global seed (overrides the config)");
  app.add_option("--out", opt.out, "Output directory (overrides the config)");
  app.add_option("--set", opt.sets, "Override as dotted.key=json_value; repeatable");

  int steps = 0, index = 0, n_samples = 16;
  std::string method = "luno_la", points;

  auto* generate = app.add_subcommand("generate", "Solve the PDE and write the dataset");
  auto* train = app.add_subcommand("train", "Train the base model and ensemble members");
  auto* fit_belief = app.add_subcommand("fit-belief", "Fit the isotropic and low-rank Laplace beliefs");
  auto* calibrate = app.add_subcommand("calibrate", "Grid-search the scale of every method on validation pairs");
  auto* evaluate = app.add_subcommand("evaluate", "Score all methods on test pairs");
  auto* rollout = app.add_subcommand("rollout", "Autoregressive rollout metrics per step");
  rollout->add_option("--steps", steps, "Number of steps (0: profile default)");
  auto* sample = app.add_subcommand("sample", "Draw function samples for one test input");
  sample->add_option("--method", method, "luno_iso or luno_la")->capture_default_str();
  sample->add_option("--index", index, "Test pair index")->capture_default_str();
  sample->add_option("--samples", n_samples, "Number of samples")->capture_default_str();
  sample->add_option("--points", points, "JSON file with [[x] or [x, y], ...] query points")->check(CLI::ExistingFile);
  auto* benchmark = app.add_subcommand("benchmark", "Time single-trajectory rollouts per method");
  benchmark->add_option("--steps", steps, "Number of steps (0: profile default)");
  auto* run = app.add_subcommand("run", "All stages from generate through rollout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const luno::ExperimentConfig cfg = resolve(opt);
    if (*generate || *run) {
      const auto d = luno::stage_generate(cfg);
      std::cerr << "generated " << d.train.size() << "/" << d.valid.size() << "/" << d.test.size()
                << " trajectories\n";
    }
    if (*train || *run) {
      const auto fits = luno::stage_train(cfg);
      for (std::size_t k = 0; k < fits.size(); ++k)
        std::cerr << "member " << k << " final loss " << fits[k].history.back().loss << '\n';
    }
    if (*fit_belief || *run) std::cerr << "belief " << luno::stage_fit_belief(cfg)["ggn"].dump() << '\n';
    if (*calibrate || *run) {
      const auto cal = luno::stage_calibrate(cfg);
      for (const auto& [name, m] : cal["methods"].items())
        std::cerr << "calibrated " << name << " scale " << m["best"].get<double>() << '\n';
    }
    if (*evaluate || *run) print_metrics(luno::stage_evaluate(cfg));
    if (*rollout || *run) {
      for (const auto& [name, per_step] : luno::stage_rollout(cfg, steps))
        std::printf("%-20s rmse step 1 %.5g, step %zu %.5g\n", name.c_str(), per_step.front().rmse,
                    per_step.size(), per_step.back().rmse);
    }
    if (*sample) std::cout << luno::stage_sample(cfg, method, index, n_samples, points).dump(2) << '\n';
    if (*benchmark) std::cout << luno::stage_benchmark(cfg, steps).dump(2) << '\n';
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", e.what()}, {"command", app.get_subcommands().front()->get_name()}};
    std::cerr << err.dump() << '\n';
    return 1;
  }
  return 0;
}
