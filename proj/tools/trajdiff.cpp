// Command-line driver: gen-cohort, train, sample, eval, sweep, ablate.

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "trajdiff/trajdiff.hpp"

namespace {

using namespace trajdiff;

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Options {
  std::string command;
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool guided = false;
  bool unguided = false;
  std::string axis;
  std::string values;
  bool allow_hash_mismatch = false;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (!o.out.empty()) cfg.output_dir = o.out;
  validate(cfg);
  return cfg;
}

void cmd_gen_cohort(const RunConfig& cfg, const RunPaths& paths) {
  const CohortData d = build_cohort_data(cfg);
  write_cohort_data(d, cfg, paths);
  std::cout << "cohort: train " << d.train.size() << ", validation " << d.validation.size() << ", test "
            << d.test.size() << " -> " << (paths.root / "cohort").string() << "\n";
}

void cmd_train(const RunConfig& cfg, const RunPaths& paths, bool allow) {
  const auto train = load_split(paths.cohort("train"), cfg, allow);
  const TrainedModels m = train_models(cfg, train);
  write_training_artifacts(m, cfg, paths);
  std::cout << "trained " << m.phases.size() << " phases; checkpoint -> " << paths.checkpoint().string() << "\n";
}

void cmd_sample(const RunConfig& cfg, const RunPaths& paths, bool guided, bool allow) {
  const TrainedModels m = load_checkpoint(paths.checkpoint(), cfg, allow);
  const std::size_t n = guided ? guided_candidates(cfg) : 1;
  for (const char* split : {"train", "test"}) {
    const auto records = load_split(paths.cohort(split), cfg, allow);
    auto generated = sample_records(cfg, m, records, n);
    write_trajectories(make_trajectory_file(cfg, std::move(generated), n), paths.samples(guided, split));
    std::cout << (guided ? "guided" : "unguided") << " N=" << n << " " << split << " -> "
              << paths.samples(guided, split).string() << "\n";
  }
}

void cmd_eval(const RunConfig& cfg, const RunPaths& paths, bool allow) {
  const auto train = load_split(paths.cohort("train"), cfg, allow);
  const auto test = load_split(paths.cohort("test"), cfg, allow);
  const auto test_truth = load_split(paths.truth("test"), cfg, allow);
  const auto ug_train = load_trajectories(paths.samples(false, "train"), cfg, allow);
  const auto ug_test = load_trajectories(paths.samples(false, "test"), cfg, allow);
  const auto g_train = load_trajectories(paths.samples(true, "train"), cfg, allow);
  const auto g_test = load_trajectories(paths.samples(true, "test"), cfg, allow);
  const Evaluation ev = evaluate_modes(cfg, train, test, test_truth, ug_train, ug_test, g_train, g_test);
  const std::string csv = metrics_csv(cfg, ev);
  write_file_atomic(paths.metrics(), csv);
  write_file_atomic(paths.trajectory_errors(), trajectory_errors_csv(ev));
  std::cout << csv;
}

void cmd_sweep(const RunConfig& cfg, const RunPaths& paths, const Options& o) {
  if (o.axis.empty() || o.values.empty()) throw ConfigError("sweep needs --axis and --values");
  parse_axis(o.axis);
  const auto values = parse_axis_values(o.values);
  PipelineRunner runner;
  const auto rows = run_sweep(runner, cfg, o.axis, values);
  const std::string csv = sweep_csv(cfg, rows);
  write_file_atomic(paths.sweep(o.axis), csv);
  std::cout << csv;
}

void cmd_ablate(const RunConfig& cfg, const RunPaths& paths) {
  PipelineRunner runner;
  const auto rows = run_ablation(runner, cfg);
  const std::string csv = ablation_csv(cfg, rows);
  write_file_atomic(paths.ablation(), csv);
  std::cout << csv;
}

int dispatch(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const RunPaths paths{cfg.output_dir};
  const bool allow = o.allow_hash_mismatch;
  if (o.command == "gen-cohort") cmd_gen_cohort(cfg, paths);
  else if (o.command == "train") cmd_train(cfg, paths, allow);
  else if (o.command == "sample") cmd_sample(cfg, paths, !o.unguided, allow);
  else if (o.command == "eval") cmd_eval(cfg, paths, allow);
  else if (o.command == "sweep") cmd_sweep(cfg, paths, o);
  else if (o.command == "ablate") cmd_ablate(cfg, paths);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Longitudinal trajectory diffusion with plausibility-guided sampling"};
  Options o;
  app.add_option("command", o.command, "gen-cohort | train | sample | eval | sweep | ablate")
      ->required()
      ->check(CLI::IsMember({"gen-cohort", "train", "sample", "eval", "sweep", "ablate"}));
  app.add_option("--config", o.config_path, "INI config file");
  app.add_option("--out", o.out, "output directory (overrides run.output_dir)");
  app.add_option("--seed", o.seed, "root seed (overrides run.seed)");
  app.add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  auto* guided = app.add_flag("--guided", o.guided, "sample with guidance (default)");
  app.add_flag("--unguided", o.unguided, "sample with a single candidate")->excludes(guided);
  app.add_option("--axis", o.axis, "sweep axis: T_steps | D_max | N");
  app.add_option("--values", o.values, "comma-separated sweep values");
  app.add_flag("--allow-hash-mismatch", o.allow_hash_mismatch, "accept artifacts from a different config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    return dispatch(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
