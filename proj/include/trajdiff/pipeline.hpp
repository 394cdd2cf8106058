#ifndef TRAJDIFF_PIPELINE_HPP
#define TRAJDIFF_PIPELINE_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajdiff/classify.hpp"
#include "trajdiff/cohort.hpp"
#include "trajdiff/config.hpp"
#include "trajdiff/curriculum.hpp"
#include "trajdiff/diffusion.hpp"
#include "trajdiff/errors.hpp"
#include "trajdiff/guidance.hpp"
#include "trajdiff/io_util.hpp"
#include "trajdiff/log.hpp"

namespace trajdiff {

// ---------------------------------------------------------------------------
// Cohort splits

struct CohortData {
  std::vector<TrajectoryRecord> train, validation, test;
  std::vector<TrajectoryRecord> train_truth, validation_truth, test_truth;
};

// Generates the cohort and its 70/10/20 split. With a domain shift, test
// patients keep their baselines but follow shifted dynamics.
inline CohortData build_cohort_data(const RunConfig& cfg) {
  const CohortConfig cc = cohort_config(cfg);
  Cohort all = generate_cohort(cc);
  const CohortSplit split = split_indices(cc.n_patients, cfg.seed);
  if (cfg.domain_shift > 0.0) {
    const CohortConfig shifted = shifted_dynamics(cc, cfg.domain_shift);
    for (std::size_t i : split.test) {
      PatientDraw draw = generate_patient(shifted, i);
      all.observed[i] = std::move(draw.observed);
      all.ground_truth[i] = std::move(draw.ground_truth);
    }
  }
  CohortData d;
  d.train = gather(all.observed, split.train);
  d.validation = gather(all.observed, split.validation);
  d.test = gather(all.observed, split.test);
  d.train_truth = gather(all.ground_truth, split.train);
  d.validation_truth = gather(all.ground_truth, split.validation);
  d.test_truth = gather(all.ground_truth, split.test);
  return d;
}

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path cohort(const std::string& split) const { return root / "cohort" / (split + ".jsonl"); }
  std::filesystem::path truth(const std::string& split) const { return root / "cohort" / (split + "_truth.jsonl"); }
  std::filesystem::path checkpoint() const { return root / "model" / "checkpoint.json"; }
  std::filesystem::path phase_log() const { return root / "model" / "phases.csv"; }
  std::filesystem::path augmentation_log() const { return root / "model" / "augmentation.jsonl"; }
  std::filesystem::path samples(bool guided, const std::string& split) const {
    return root / "samples" / (std::string(guided ? "guided_" : "unguided_") + split + ".jsonl");
  }
  std::filesystem::path metrics() const { return root / "eval" / "metrics.csv"; }
  std::filesystem::path trajectory_errors() const { return root / "eval" / "trajectory_errors.csv"; }
  std::filesystem::path sweep(const std::string& axis) const { return root / "sweep" / ("sweep_" + axis + ".csv"); }
  std::filesystem::path ablation() const { return root / "ablate" / "ablation.csv"; }
};

inline ArtifactHeader make_header(const std::string& artifact, const RunConfig& cfg) {
  return {artifact, kSchemaVersion, config_hash(cfg)};
}

// Throws DataError when an artifact was produced under a different config.
inline void check_hash(const std::optional<ArtifactHeader>& header, const RunConfig& cfg,
                       const std::filesystem::path& source, bool allow_mismatch) {
  if (!header) {
    if (!allow_mismatch) throw DataError(source.string() + ": missing artifact header");
    return;
  }
  if (header->schema_version != kSchemaVersion)
    throw DataError(source.string() + ": unsupported schema_version " + std::to_string(header->schema_version));
  const std::string expected = config_hash(cfg);
  if (header->config_hash != expected) {
    const std::string msg = source.string() + ": config hash " + header->config_hash + " does not match " + expected;
    if (!allow_mismatch) throw DataError(msg + " (pass --allow-hash-mismatch to override)");
    warn(msg);
  }
}

inline void write_cohort_data(const CohortData& d, const RunConfig& cfg, const RunPaths& paths) {
  const ArtifactHeader h = make_header("cohort", cfg);
  const ArtifactHeader ht = make_header("cohort_truth", cfg);
  write_cohort(d.train, paths.cohort("train"), h);
  write_cohort(d.validation, paths.cohort("validation"), h);
  write_cohort(d.test, paths.cohort("test"), h);
  write_cohort(d.train_truth, paths.truth("train"), ht);
  write_cohort(d.validation_truth, paths.truth("validation"), ht);
  write_cohort(d.test_truth, paths.truth("test"), ht);
}

inline std::vector<TrajectoryRecord> load_split(const std::filesystem::path& path, const RunConfig& cfg,
                                                bool allow_mismatch) {
  if (!std::filesystem::exists(path)) throw DataError("missing input " + path.string());
  CohortFile f = read_cohort_file(path);
  check_hash(f.header, cfg, path, allow_mismatch);
  return std::move(f.records);
}

// ---------------------------------------------------------------------------
// Training

struct TrainedModels {
  NoiseSchedule schedule;
  MlpDenoiser denoiser;
  std::vector<PhaseSummary> phases;
  std::vector<AugmentationEntry> augmentation_log;
  QuantizerSpec quantizer;
  TokenScorer scorer;
  Vec scorer_r2;
  AffineExpectation expected;         // baseline biomarkers -> biomarkers at tau
  AffineExpectation latent_expected;  // baseline latent -> latent at tau
};

// Observed latents of the training split, all positions.
inline std::vector<Vec> observed_latents(const std::vector<TrajectoryRecord>& records) {
  std::vector<Vec> out;
  for (const auto& r : records)
    for (std::size_t pos = 0; pos < kGridLength; ++pos)
      if (r.present(pos) && r.flags[pos] == Provenance::observed) out.push_back(*r.latents[pos]);
  return out;
}

inline TrainedModels train_models(const RunConfig& cfg, const std::vector<TrajectoryRecord>& train) {
  if (train.empty()) throw DataError("training split is empty");
  TrainedModels m;
  m.schedule = build_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
  m.denoiser = MlpDenoiser(DenoiserConfig{cfg.latent_dim, cfg.hidden}, derive_seed(cfg.seed, {seed_tag::kInit}));
  CurriculumState state = run_curriculum(m.denoiser, m.schedule, train, curriculum_config(cfg));
  m.phases = std::move(state.phases);
  m.augmentation_log = std::move(state.augmentation_log);

  m.quantizer = fit_quantizer(observed_latents(train), cfg.bins);
  std::vector<TokenSequence> tokens;
  std::vector<Vec> targets;
  for (const auto& r : train)
    for (std::size_t pos = 0; pos < kGridLength; ++pos)
      if (r.present(pos) && r.biomarkers[pos] && r.flags[pos] == Provenance::observed) {
        tokens.push_back(quantize(*r.latents[pos], m.quantizer));
        targets.push_back(*r.biomarkers[pos]);
      }
  ScorerTraining st = train_scorer(tokens, targets, m.quantizer.vocab_size(), scorer_config(cfg));
  m.scorer = std::move(st.scorer);
  m.scorer_r2 = std::move(st.holdout_r2);
  m.expected = fit_expected_model(train);
  m.latent_expected = fit_latent_expectation(train);
  return m;
}

inline nlohmann::ordered_json checkpoint_json(const TrainedModels& m, const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["artifact"] = "checkpoint";
  j["schema_version"] = kSchemaVersion;
  j["config_hash"] = config_hash(cfg);
  j["schedule"] = {{"steps", m.schedule.steps()}, {"beta_start", m.schedule.beta_start},
                   {"beta_end", m.schedule.beta_end}};
  j["denoiser"] = m.denoiser.to_json();
  j["guidance"] = {{"quantizer", m.quantizer.to_json()},
                   {"scorer", m.scorer.to_json()},
                   {"scorer_holdout_r2", m.scorer_r2},
                   {"expected_biomarkers", m.expected.to_json()},
                   {"expected_latents", m.latent_expected.to_json()}};
  return j;
}

inline TrainedModels models_from_checkpoint(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion) throw DataError("checkpoint: unsupported schema_version");
    TrainedModels m;
    const auto& s = j.at("schedule");
    m.schedule = build_schedule(s.at("steps").get<std::size_t>(), s.at("beta_start").get<double>(),
                                s.at("beta_end").get<double>());
    m.denoiser = MlpDenoiser::from_json(j.at("denoiser"));
    const auto& g = j.at("guidance");
    m.quantizer = QuantizerSpec::from_json(g.at("quantizer"));
    m.scorer = TokenScorer::from_json(g.at("scorer"));
    m.scorer_r2 = g.at("scorer_holdout_r2").get<Vec>();
    m.expected = AffineExpectation::from_json(g.at("expected_biomarkers"));
    m.latent_expected = AffineExpectation::from_json(g.at("expected_latents"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void write_training_artifacts(const TrainedModels& m, const RunConfig& cfg, const RunPaths& paths) {
  write_file_atomic(paths.checkpoint(), checkpoint_json(m, cfg).dump() + "\n");
  std::string csv = phase_csv_header();
  for (const auto& p : m.phases) csv += phase_csv_row(p);
  write_file_atomic(paths.phase_log(), csv);
  nlohmann::ordered_json h = header_to_json(make_header("augmentation_log", cfg));
  std::string log = h.dump() + "\n";
  for (const auto& e : m.augmentation_log) log += to_json(e).dump() + "\n";
  write_file_atomic(paths.augmentation_log(), log);
}

inline TrainedModels load_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, bool allow_mismatch) {
  if (!std::filesystem::exists(path)) throw DataError("missing checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  ArtifactHeader h;
  h.artifact = j.value("artifact", "");
  h.schema_version = j.value("schema_version", 0);
  h.config_hash = j.value("config_hash", "");
  check_hash(h, cfg, path, allow_mismatch);
  return models_from_checkpoint(j);
}

// ---------------------------------------------------------------------------
// Sampling

inline std::unique_ptr<CandidateEvaluator> make_evaluator(const RunConfig& cfg, const TrainedModels& m) {
  if (!cfg.ablation.feature_adaptation) return std::make_unique<RawLatentEvaluator>(m.latent_expected);
  return std::make_unique<BiomarkerEvaluator>(m.quantizer, m.scorer, m.expected);
}

// N for the guided run; the guidance switch collapses it to one candidate.
inline std::size_t guided_candidates(const RunConfig& cfg) { return cfg.ablation.guidance ? cfg.candidates : 1; }

inline std::uint64_t sampling_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, {seed_tag::kSample}); }

inline std::vector<GeneratedTrajectory> sample_records(const RunConfig& cfg, const TrainedModels& m,
                                                       const std::vector<TrajectoryRecord>& records,
                                                       std::size_t candidates) {
  const ReverseSampler<MlpDenoiser> sampler(m.denoiser, m.schedule);
  const auto evaluator = make_evaluator(cfg, m);
  return generate_trajectories(sampler, *evaluator, records, candidates, sampling_seed(cfg), cfg.threads);
}

inline TrajectoryFile make_trajectory_file(const RunConfig& cfg, std::vector<GeneratedTrajectory> trajectories,
                                           std::size_t candidates) {
  TrajectoryFile f;
  f.header = make_header("trajectories", cfg);
  f.candidates = candidates;
  f.run_seed = sampling_seed(cfg);
  f.trajectories = std::move(trajectories);
  return f;
}

inline std::vector<GeneratedTrajectory> load_trajectories(const std::filesystem::path& path, const RunConfig& cfg,
                                                          bool allow_mismatch) {
  if (!std::filesystem::exists(path)) throw DataError("missing trajectories " + path.string());
  TrajectoryFile f = read_trajectories(path);
  check_hash(f.header, cfg, path, allow_mismatch);
  return std::move(f.trajectories);
}

// ---------------------------------------------------------------------------
// Evaluation

inline const char* kModeBaseline = "baseline-only";
inline const char* kModeUnguided = "unguided-full";
inline const char* kModeGuided = "full";

struct ModeMetrics {
  std::string mode;
  MetricsReport metrics;
};

struct TrajectoryError {
  std::string patient_id;
  std::string mode;
  double mse = 0.0;
};

inline std::vector<int> label_vector(const std::vector<TrajectoryRecord>& records) {
  std::vector<int> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(r.label == Label::pMCI ? 1 : 0);
  return y;
}

// Aligns generated trajectories with records by patient id.
inline std::vector<const GeneratedTrajectory*> align(const std::vector<TrajectoryRecord>& records,
                                                     const std::vector<GeneratedTrajectory>& generated) {
  std::unordered_map<std::string, const GeneratedTrajectory*> by_id;
  for (const auto& g : generated) by_id[g.patient_id] = &g;
  std::vector<const GeneratedTrajectory*> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = by_id.find(r.patient_id);
    if (it == by_id.end()) throw DataError("no generated trajectory for patient " + r.patient_id);
    out.push_back(it->second);
  }
  return out;
}

inline std::vector<Vec> feature_rows(const std::vector<TrajectoryRecord>& records,
                                     const std::vector<GeneratedTrajectory>* generated, FeatureLayout layout) {
  std::vector<Vec> rows;
  rows.reserve(records.size());
  if (layout == FeatureLayout::baseline_only) {
    for (const auto& r : records) rows.push_back(featurize(r, nullptr, layout));
    return rows;
  }
  const auto aligned = align(records, *generated);
  for (std::size_t i = 0; i < records.size(); ++i) rows.push_back(featurize(records[i], aligned[i], layout));
  return rows;
}

inline MetricsReport classify_mode(const RunConfig& cfg, const std::vector<TrajectoryRecord>& train,
                                   const std::vector<TrajectoryRecord>& test,
                                   const std::vector<GeneratedTrajectory>* train_generated,
                                   const std::vector<GeneratedTrajectory>* test_generated, FeatureLayout layout) {
  return fit_and_evaluate(feature_rows(train, train_generated, layout), label_vector(train),
                          feature_rows(test, test_generated, layout), label_vector(test), classifier_config(cfg),
                          layout)
      .metrics;
}

inline double mean_trajectory_mse(const std::vector<TrajectoryRecord>& truth,
                                  const std::vector<GeneratedTrajectory>& generated) {
  const auto aligned = align(truth, generated);
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) acc += trajectory_mse(*aligned[i], truth[i]);
  return truth.empty() ? 0.0 : acc / static_cast<double>(truth.size());
}

struct Evaluation {
  std::vector<ModeMetrics> rows;  // baseline-only, unguided-full, full
  std::vector<TrajectoryError> errors;
};

inline Evaluation evaluate_modes(const RunConfig& cfg, const std::vector<TrajectoryRecord>& train,
                                 const std::vector<TrajectoryRecord>& test,
                                 const std::vector<TrajectoryRecord>& test_truth,
                                 const std::vector<GeneratedTrajectory>& unguided_train,
                                 const std::vector<GeneratedTrajectory>& unguided_test,
                                 const std::vector<GeneratedTrajectory>& guided_train,
                                 const std::vector<GeneratedTrajectory>& guided_test) {
  Evaluation ev;
  ev.rows.push_back({kModeBaseline, classify_mode(cfg, train, test, nullptr, nullptr, FeatureLayout::baseline_only)});
  ev.rows.push_back(
      {kModeUnguided, classify_mode(cfg, train, test, &unguided_train, &unguided_test, FeatureLayout::full)});
  ev.rows.push_back({kModeGuided, classify_mode(cfg, train, test, &guided_train, &guided_test, FeatureLayout::full)});
  for (const auto& [mode, gen] : {std::pair{kModeUnguided, &unguided_test}, std::pair{kModeGuided, &guided_test}}) {
    const auto aligned = align(test_truth, *gen);
    for (std::size_t i = 0; i < test_truth.size(); ++i)
      ev.errors.push_back({test_truth[i].patient_id, mode, trajectory_mse(*aligned[i], test_truth[i])});
  }
  return ev;
}

inline std::string metrics_csv(const RunConfig& cfg, const Evaluation& ev) {
  std::string out = metrics_csv_header() + "\n";
  for (const auto& row : ev.rows) out += metrics_csv_row(cfg.run_id, row.mode, row.metrics, cfg.seed) + "\n";
  return out;
}

inline std::string trajectory_errors_csv(const Evaluation& ev) {
  std::string out = "patient_id,mode,mse\n";
  for (const auto& e : ev.errors) out += e.patient_id + "," + e.mode + "," + format_metric(e.mse) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// In-memory runs for sweeps and ablations. Trained models and trajectories are
// cached by the parts of the config that determine them.

class PipelineRunner {
 public:
  struct Result {
    Evaluation evaluation;
    double guided_mse = 0.0;
    double unguided_mse = 0.0;
  };

  Result run(const RunConfig& cfg) {
    const CohortData& data = cohort(cfg);
    const TrainedModels& models = trained(cfg, data);
    const auto& ug_train = trajectories(cfg, models, data.train, 1, "train");
    const auto& ug_test = trajectories(cfg, models, data.test, 1, "test");
    const std::size_t n = guided_candidates(cfg);
    const auto& g_train = trajectories(cfg, models, data.train, n, "train");
    const auto& g_test = trajectories(cfg, models, data.test, n, "test");
    Result r;
    r.evaluation = evaluate_modes(cfg, data.train, data.test, data.test_truth, ug_train, ug_test, g_train, g_test);
    r.guided_mse = mean_trajectory_mse(data.test_truth, g_test);
    r.unguided_mse = mean_trajectory_mse(data.test_truth, ug_test);
    return r;
  }

  const CohortData& cohort(const RunConfig& cfg) {
    const std::string key = cohort_key(cfg);
    auto it = cohorts_.find(key);
    if (it == cohorts_.end()) it = cohorts_.emplace(key, std::make_unique<CohortData>(build_cohort_data(cfg))).first;
    return *it->second;
  }

  const TrainedModels& trained(const RunConfig& cfg, const CohortData& data) {
    const std::string key = training_key(cfg);
    auto it = models_.find(key);
    if (it == models_.end())
      it = models_.emplace(key, std::make_unique<TrainedModels>(train_models(cfg, data.train))).first;
    return *it->second;
  }

  const std::vector<GeneratedTrajectory>& trajectories(const RunConfig& cfg, const TrainedModels& models,
                                                       const std::vector<TrajectoryRecord>& records,
                                                       std::size_t candidates, const std::string& split) {
    std::string key = training_key(cfg) + "|" + split + "|" + std::to_string(candidates);
    if (candidates > 1) key += cfg.ablation.feature_adaptation ? "|adapted" : "|raw";
    auto it = samples_.find(key);
    if (it == samples_.end())
      it = samples_.emplace(key, std::make_unique<std::vector<GeneratedTrajectory>>(
                                     sample_records(cfg, models, records, candidates)))
               .first;
    return *it->second;
  }

 private:
  static std::string cohort_key(const RunConfig& cfg) {
    RunConfig c = cfg;
    c.run_id = "-";
    // Only cohort fields and the seed matter here.
    const RunConfig d{};
    c.hidden = d.hidden;
    c.diffusion_steps = d.diffusion_steps;
    c.beta_start = d.beta_start;
    c.beta_end = d.beta_end;
    c.max_difficulty = d.max_difficulty;
    c.epochs = d.epochs;
    c.batch_size = d.batch_size;
    c.learning_rate = d.learning_rate;
    neutralize_downstream(c);
    c.ablation = d.ablation;
    return canonical_config(c);
  }

  static std::string training_key(const RunConfig& cfg) {
    RunConfig c = cfg;
    c.run_id = "-";
    neutralize_downstream(c);
    c.ablation.guidance = true;
    c.ablation.feature_adaptation = true;
    return canonical_config(c);
  }

  static void neutralize_downstream(RunConfig& c) {
    const RunConfig d{};
    c.candidates = d.candidates;
    c.l2 = d.l2;
    c.classifier_iterations = d.classifier_iterations;
    c.classifier_learning_rate = d.classifier_learning_rate;
  }

  std::map<std::string, std::unique_ptr<CohortData>> cohorts_;
  std::map<std::string, std::unique_ptr<TrainedModels>> models_;
  std::map<std::string, std::unique_ptr<std::vector<GeneratedTrajectory>>> samples_;
};

// ---------------------------------------------------------------------------
// Sweeps and ablations

enum class SweepAxis { diffusion_steps, max_difficulty, candidates };

inline SweepAxis parse_axis(const std::string& name) {
  if (name == "T_steps") return SweepAxis::diffusion_steps;
  if (name == "D_max") return SweepAxis::max_difficulty;
  if (name == "N") return SweepAxis::candidates;
  throw ConfigError("unknown sweep axis '" + name + "' (expected T_steps, D_max or N)");
}

inline RunConfig with_axis_value(RunConfig cfg, SweepAxis axis, std::size_t value) {
  switch (axis) {
    case SweepAxis::diffusion_steps: cfg.diffusion_steps = value; break;
    case SweepAxis::max_difficulty: cfg.max_difficulty = value; break;
    case SweepAxis::candidates: cfg.candidates = value; break;
  }
  validate(cfg);
  return cfg;
}

inline std::vector<std::size_t> parse_axis_values(const std::string& csv) {
  std::vector<std::size_t> out;
  for (const auto& item : detail::split_csv(csv)) out.push_back(detail::parse_u64("--values", item));
  if (out.empty()) throw ConfigError("--values must list at least one value");
  return out;
}

struct SweepRow {
  std::string axis;
  std::size_t value = 0;
  MetricsReport metrics;
  double guided_mse = 0.0;
};

inline std::vector<SweepRow> run_sweep(PipelineRunner& runner, const RunConfig& base, const std::string& axis_name,
                                       const std::vector<std::size_t>& values) {
  const SweepAxis axis = parse_axis(axis_name);
  std::vector<SweepRow> rows;
  for (std::size_t v : values) {
    const RunConfig cfg = with_axis_value(base, axis, v);
    info("sweep " + axis_name + "=" + std::to_string(v));
    const auto r = runner.run(cfg);
    rows.push_back({axis_name, v, r.evaluation.rows.back().metrics, r.guided_mse});
  }
  return rows;
}

inline std::string sweep_csv(const RunConfig& cfg, const std::vector<SweepRow>& rows) {
  std::string out = "axis,value," + metrics_csv_header() + ",mse\n";
  for (const auto& r : rows)
    out += r.axis + "," + std::to_string(r.value) + "," + metrics_csv_row(cfg.run_id, kModeGuided, r.metrics, cfg.seed) +
           "," + format_metric(r.guided_mse) + "\n";
  return out;
}

struct AblationSetting {
  std::string name;
  bool reference = false;
  AblationSwitches switches;
};

inline std::vector<AblationSetting> ablation_settings() {
  std::vector<AblationSetting> s;
  auto off = [](auto member) {
    AblationSwitches a;
    a.*member = false;
    return a;
  };
  s.push_back({"w/o interpolation task", false, off(&AblationSwitches::interpolation_task)});
  s.push_back({"w/o interpolation aug", false, off(&AblationSwitches::interpolation_aug)});
  s.push_back({"w/o extrapolation task", false, off(&AblationSwitches::extrapolation_task)});
  s.push_back({"w/o extrapolation aug", false, off(&AblationSwitches::extrapolation_aug)});
  s.push_back({"w/o feature adaptation", false, off(&AblationSwitches::feature_adaptation)});
  s.push_back({"w/o guidance", false, off(&AblationSwitches::guidance)});
  s.push_back({"complete", true, AblationSwitches{}});
  return s;
}

struct AblationRow {
  AblationSetting setting;
  MetricsReport metrics;
  double guided_mse = 0.0;
};

inline std::vector<AblationRow> run_ablation(PipelineRunner& runner, const RunConfig& base) {
  std::vector<AblationRow> rows;
  for (const auto& s : ablation_settings()) {
    RunConfig cfg = base;
    cfg.ablation = s.switches;
    info("ablation: " + s.name);
    const auto r = runner.run(cfg);
    rows.push_back({s, r.evaluation.rows.back().metrics, r.guided_mse});
  }
  return rows;
}

inline std::string ablation_csv(const RunConfig& cfg, const std::vector<AblationRow>& rows) {
  std::string out = "setting,reference," + metrics_csv_header() + ",mse\n";
  for (const auto& r : rows)
    out += r.setting.name + "," + (r.setting.reference ? "1" : "0") + "," +
           metrics_csv_row(cfg.run_id, kModeGuided, r.metrics, cfg.seed) + "," + format_metric(r.guided_mse) + "\n";
  return out;
}

}  // namespace trajdiff

#endif  // TRAJDIFF_PIPELINE_HPP
