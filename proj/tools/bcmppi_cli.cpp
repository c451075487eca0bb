// bcmppi: dataset generation, surrogate training, episodes, sweeps and reports.
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include "bcmppi/experiment.hpp"
#include "bcmppi/parallel.hpp"
#include "bcmppi/plot.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <iostream>

namespace {

using namespace bcmppi;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out_dir;
};

/// Loads the config, applies overrides and flags, and fills defaults that depend on the
/// environment (output root, worker count).
ExperimentConfig load_config(const CommonOptions& opt) {
  nlohmann::json doc = nlohmann::json::object();
  fs::path config_dir = fs::current_path();
  if (!opt.config_path.empty()) {
    doc = read_json_file(opt.config_path);
    config_dir = fs::absolute(opt.config_path).parent_path();
  }
  for (const auto& o : opt.overrides) apply_override(doc, o);
  const bool has_out = doc.is_object() && doc.contains("output_dir");
  const bool has_workers = doc.is_object() && doc.contains("workers");

  ExperimentConfig cfg = config_from_json(doc);
  anchor_relative_paths(cfg, config_dir);
  if (!opt.out_dir.empty()) {
    cfg.output_dir = opt.out_dir;
  } else if (!has_out) {
    if (const char* env = std::getenv("BCMPPI_OUT_DIR"); env && *env) cfg.output_dir = env;
  }
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.workers) {
    if (*opt.workers < 1) throw ConfigError("--workers must be >= 1");
    cfg.workers = *opt.workers;
  } else if (!has_workers) {
    cfg.workers = default_workers();
  }
  cfg.training.workers = cfg.workers;
  fs::create_directories(cfg.output_root());
  return cfg;
}

void dump_effective(const ExperimentConfig& cfg, const std::string& command) {
  write_json_file(config_to_json(cfg), cfg.output_root() / (command + "_config.json"));
}

SurrogateEnsemble load_model_or_explain(const ExperimentConfig& cfg) {
  const fs::path path = cfg.resolved_model_path();
  if (!fs::exists(path)) {
    throw ConfigError("bc_mppi needs a trained surrogate, but no model file exists at " + path.string() +
                      " (run 'bcmppi train' first or set surrogate.model_path)");
  }
  return load_ensemble(path.string());
}

int cmd_generate_data(const ExperimentConfig& cfg) {
  dump_effective(cfg, "generate-data");
  const Scenario scenario = resolve_scenario(cfg.scenario);
  const GeneratedDataset gd = generate_dataset(cfg.dataset, scenario, cfg.quadrotor, cfg.mppi.dt, cfg.seed);
  const fs::path path = cfg.resolved_dataset_path();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_dataset_csv(gd.data, path.string());

  const nlohmann::json summary = {
      {"path", path.string()},
      {"rows", gd.data.size()},
      {"columns", kFeatureDim + 1},
      {"motion_counts",
       {{"circular", gd.motion_counts[0]}, {"diagonal", gd.motion_counts[1]}, {"sinusoidal", gd.motion_counts[2]}}},
      {"label_convention", to_string(cfg.dataset.label_convention)},
      {"label_mean", gd.label_mean},
      {"label_min", gd.label_min},
      {"label_max", gd.label_max},
      {"violating_fraction", gd.violating_fraction}};
  write_json_file(summary, cfg.output_root() / "dataset_summary.json");
  std::cout << "rows " << gd.data.size() << " (circular " << gd.motion_counts[0] << ", diagonal "
            << gd.motion_counts[1] << ", sinusoidal " << gd.motion_counts[2] << ")\n"
            << "label mean " << gd.label_mean << " min " << gd.label_min << " max " << gd.label_max
            << " violating " << gd.violating_fraction << "\n"
            << "wrote " << path.string() << '\n';
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  dump_effective(cfg, "train");
  const fs::path data_path = cfg.resolved_dataset_path();
  if (!fs::exists(data_path)) {
    throw ConfigError("no dataset at " + data_path.string() + " (run 'bcmppi generate-data' first or set dataset.path)");
  }
  Dataset data;
  try {
    data = read_dataset_csv(data_path.string());
  } catch (const SchemaError& e) {
    throw ConfigError(e.what());
  }
  const fs::path report_path = cfg.output_root() / "training_report.json";
  TrainingResult result;
  try {
    result = train(data, cfg.training, cfg.seed);
  } catch (const TrainingDivergedError& e) {
    write_json_file({{"status", "diverged"}, {"error", e.what()}, {"dataset", data_path.string()}}, report_path);
    throw;
  }
  const fs::path model_path = cfg.resolved_model_path();
  if (model_path.has_parent_path()) fs::create_directories(model_path.parent_path());
  save_ensemble(result.ensemble, model_path.string());

  nlohmann::json report = report_to_json(result.report);
  report["status"] = "ok";
  report["dataset"] = data_path.string();
  report["model"] = model_path.string();
  report["model_hash"] = model_hash(result.ensemble);
  write_json_file(report, report_path);
  std::cout << "split " << result.report.train_size << "/" << result.report.test_size << "\n"
            << "train mse " << result.report.train.mse << " r2 " << result.report.train.r2 << "\n"
            << "test mse " << result.report.test.mse << " r2 " << result.report.test.r2 << "\n"
            << "model " << model_path.string() << " hash " << model_hash(result.ensemble) << '\n';
  return 0;
}

int cmd_run(const ExperimentConfig& cfg, const std::string& trace_path, const std::string& diagnostics_path) {
  dump_effective(cfg, "run");
  const Scenario scenario = resolve_scenario(cfg.scenario);
  EpisodeConfig ec = episode_config(cfg, scenario);
  SurrogateEnsemble model;
  if (ec.controller == ControllerKind::kBcMppi) {
    model = load_model_or_explain(cfg);
    ec.feasibility = surrogate_feasibility({&model});
  }
  ec.keep_diagnostics = !diagnostics_path.empty();
  const EpisodeResult r = run_episode(ec);

  SweepRow row{ec.controller, ec.mppi.num_samples, ec.seed, scenario.name,
               static_cast<int>(scenario.obstacles.size()), r.metrics};
  write_metrics_csv(std::span<const SweepRow>(&row, 1), (cfg.output_root() / "run_metrics.csv").string());
  if (!trace_path.empty()) write_trace_csv(r.trace, trace_path);
  if (!diagnostics_path.empty()) write_diagnostics_csv(r.diagnostics, diagnostics_path);
  std::cout << join(metrics_csv_header()) << '\n' << metrics_csv_row(row) << '\n';
  if (r.metrics.failed) {
    std::cerr << "episode failed: " << r.metrics.failure << '\n';
    return kExitRuntime;
  }
  return 0;
}

void print_violation_summary(std::span<const SweepRow> rows, double threshold) {
  for (const auto& [c, fraction] : collision_episode_fraction(rows)) {
    std::cout << to_string(c) << ": " << fraction * 100.0 << "% of episodes collided ("
              << (fraction <= threshold ? "within" : "above") << " the " << threshold * 100.0 << "% threshold)\n";
  }
}

std::vector<SweepRow> run_grid(const ExperimentConfig& cfg) {
  std::vector<std::string> refs = cfg.sweep.scenarios;
  if (refs.empty()) refs.push_back(cfg.scenario);
  std::vector<Scenario> scenarios;
  for (const auto& ref : refs) scenarios.push_back(resolve_scenario(ref));

  SurrogateEnsemble model;
  FeasibilityFn feasibility;
  for (auto c : cfg.sweep.controllers) {
    if (c == ControllerKind::kBcMppi && !feasibility) {
      model = load_model_or_explain(cfg);
      feasibility = surrogate_feasibility({&model});
    }
  }
  SweepSpec spec;
  spec.k_values = cfg.sweep.k_values;
  spec.n_seeds = cfg.sweep.n_seeds;
  spec.controllers = cfg.sweep.controllers;
  spec.randomize_scenarios = cfg.sweep.randomize_scenarios;

  std::vector<SweepRow> rows;
  for (const auto& scenario : scenarios) {
    EpisodeConfig base = episode_config(cfg, scenario);
    base.feasibility = feasibility;
    auto part = run_sweep(base, spec, [](const SweepRow& r) {
      std::cerr << to_string(r.controller) << " K=" << r.num_samples << " seed=" << r.seed << " " << r.scenario
                << (r.metrics.failed ? " FAILED: " + r.metrics.failure : "") << '\n';
    });
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  dump_effective(cfg, "sweep");
  const auto rows = run_grid(cfg);
  const fs::path out = cfg.output_root();
  write_metrics_csv(rows, (out / "sweep_metrics.csv").string());
  const auto agg = aggregate(rows);
  write_aggregate_csv(agg, (out / "sweep_aggregate.csv").string());
  write_report(rows, out / "plots");
  print_violation_summary(rows, cfg.sweep.violation_threshold);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.metrics.failed ? 1 : 0;
  std::cout << rows.size() << " episodes (" << failed << " failed); wrote " << (out / "sweep_metrics.csv").string()
            << ", " << (out / "sweep_aggregate.csv").string() << ", " << (out / "plots/index.html").string()
            << '\n';
  return 0;
}

int cmd_report(const ExperimentConfig& cfg, std::vector<std::string> metrics_paths, std::string plots_dir) {
  if (metrics_paths.empty()) metrics_paths.push_back((cfg.output_root() / "sweep_metrics.csv").string());
  if (plots_dir.empty()) plots_dir = (cfg.output_root() / "plots").string();
  std::vector<SweepRow> rows;
  for (const auto& p : metrics_paths) {
    if (!fs::exists(p)) throw ConfigError("metrics file not found: " + p);
    std::vector<SweepRow> part;
    try {
      part = read_metrics_csv(p);
    } catch (const SchemaError& e) {
      throw ConfigError(e.what());
    }
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const auto written = write_report(rows, plots_dir);
  write_aggregate_csv(aggregate(rows), (fs::path(plots_dir) / "aggregate.csv").string());
  print_violation_summary(rows, cfg.sweep.violation_threshold);
  std::cout << written.size() << " plots from " << rows.size() << " episodes; index "
            << (fs::path(plots_dir) / "index.html").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BC-MPPI quadrotor experiments"};
  app.require_subcommand(1);
  CommonOptions common;
  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "JSON experiment config");
    sub->add_option("--set", common.overrides, "Dotted override, e.g. mppi.num_samples=500")->take_all();
    sub->add_option("--seed", common.seed, "Seed used by every random component");
    sub->add_option("--workers", common.workers, "Worker threads (default: available cores)");
    sub->add_option("-o,--out", common.out_dir, "Output directory (default: config, then $BCMPPI_OUT_DIR)");
  };

  auto* gen = app.add_subcommand("generate-data", "Simulate labelled rollouts for surrogate training");
  auto* trn = app.add_subcommand("train", "Train the surrogate ensemble on the dataset");
  auto* run = app.add_subcommand("run", "Run one closed-loop episode");
  auto* swp = app.add_subcommand("sweep", "Run controllers x K x seeds and plot the results");
  auto* rep = app.add_subcommand("report", "Plot metrics CSV files");
  for (auto* sub : {gen, trn, run, swp, rep}) add_common(sub);

  std::string trace_path;
  std::string diagnostics_path;
  run->add_option("--trace", trace_path, "Write the per-step trace CSV here");
  run->add_option("--diagnostics", diagnostics_path, "Write per-sample weight diagnostics CSV here");
  std::vector<std::string> metrics_paths;
  std::string plots_dir;
  rep->add_option("--metrics", metrics_paths, "Metrics CSV files (default: <out>/sweep_metrics.csv)");
  rep->add_option("--plots-dir", plots_dir, "Output directory for SVG plots (default: <out>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const ExperimentConfig cfg = load_config(common);
    if (gen->parsed()) return cmd_generate_data(cfg);
    if (trn->parsed()) return cmd_train(cfg);
    if (run->parsed()) return cmd_run(cfg, trace_path, diagnostics_path);
    if (swp->parsed()) return cmd_sweep(cfg);
    if (rep->parsed()) return cmd_report(cfg, metrics_paths, plots_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
