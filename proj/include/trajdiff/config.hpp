#ifndef TRAJDIFF_CONFIG_HPP
#define TRAJDIFF_CONFIG_HPP

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "trajdiff/classify.hpp"
#include "trajdiff/cohort.hpp"
#include "trajdiff/curriculum.hpp"
#include "trajdiff/diffusion.hpp"
#include "trajdiff/errors.hpp"
#include "trajdiff/guidance.hpp"
#include "trajdiff/io_util.hpp"

namespace trajdiff {

struct AblationSwitches {
  bool interpolation_task = true;
  bool interpolation_aug = true;
  bool extrapolation_task = true;
  bool extrapolation_aug = true;
  bool guidance = true;
  // Off: candidates are scored on raw latents, skipping quantizer and scorer.
  bool feature_adaptation = true;

  friend bool operator==(const AblationSwitches&, const AblationSwitches&) = default;
};

struct RunConfig {
  // [run]
  std::uint64_t seed = 1;
  std::string run_id = "default";
  std::filesystem::path output_dir = "runs/default";  // not hashed
  std::size_t threads = 1;                            // not hashed

  // [cohort]
  std::size_t n_patients = 1000;
  std::size_t latent_dim = 16;
  std::size_t biomarker_dim = 8;
  double pmci_prior = 0.4;
  CohortDesign design{};
  MissingnessSpec missingness{};
  double domain_shift = 0.0;  // applied to the test split only; 0 disables

  // [diffusion]
  std::size_t hidden = 128;
  std::size_t diffusion_steps = 40;
  double beta_start = 1e-4;
  double beta_end = 0.2;

  // [curriculum]
  std::size_t max_difficulty = 4;
  std::vector<std::size_t> epochs{200, 160, 130, 100};
  std::size_t batch_size = 64;
  double learning_rate = 3e-3;

  // [guidance]
  std::size_t bins = 64;
  std::size_t embed_dim = 32;
  std::size_t candidates = 20;
  std::size_t scorer_epochs = 40;
  double scorer_learning_rate = 3e-3;

  // [classifier]
  double l2 = 1e-3;
  std::size_t classifier_iterations = 400;
  double classifier_learning_rate = 0.05;

  // [ablation]
  AblationSwitches ablation{};
};

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class T>
std::string join_csv(const T& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) out += format_double(v);
    else out += std::to_string(v);
  }
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

// Binds every recognised key to a field; anything else in the file is an error.
class Binder {
 public:
  void num(const std::string& key, double& field) { doubles_[key] = &field; }
  void size(const std::string& key, std::size_t& field) { sizes_[key] = &field; }
  void u64(const std::string& key, std::uint64_t& field) { u64s_[key] = &field; }
  void flag(const std::string& key, bool& field) { bools_[key] = &field; }
  void text(const std::string& key, std::string& field) { strings_[key] = &field; }
  void sizes(const std::string& key, std::vector<std::size_t>& field) { size_lists_[key] = &field; }
  void nums(const std::string& key, double* field, std::size_t n) { num_arrays_[key] = {field, n}; }

  void assign(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (auto it = doubles_.find(key); it != doubles_.end()) *it->second = parse_double(key, v);
    else if (auto it2 = sizes_.find(key); it2 != sizes_.end()) *it2->second = parse_u64(key, v);
    else if (auto it3 = u64s_.find(key); it3 != u64s_.end()) *it3->second = parse_u64(key, v);
    else if (auto it4 = bools_.find(key); it4 != bools_.end()) *it4->second = parse_bool(key, v);
    else if (auto it5 = strings_.find(key); it5 != strings_.end()) *it5->second = v;
    else if (auto it6 = size_lists_.find(key); it6 != size_lists_.end()) {
      it6->second->clear();
      for (const auto& item : split_csv(v)) it6->second->push_back(parse_u64(key, item));
    } else if (auto it7 = num_arrays_.find(key); it7 != num_arrays_.end()) {
      const auto items = split_csv(v);
      if (items.size() != it7->second.second)
        throw ConfigError(key + ": expected " + std::to_string(it7->second.second) + " values");
      for (std::size_t i = 0; i < items.size(); ++i) it7->second.first[i] = parse_double(key, items[i]);
    } else {
      throw ConfigError("unknown configuration key '" + key + "'");
    }
  }

 private:
  std::map<std::string, double*> doubles_;
  std::map<std::string, std::size_t*> sizes_;
  std::map<std::string, std::uint64_t*> u64s_;
  std::map<std::string, bool*> bools_;
  std::map<std::string, std::string*> strings_;
  std::map<std::string, std::vector<std::size_t>*> size_lists_;
  std::map<std::string, std::pair<double*, std::size_t>> num_arrays_;
};

inline Binder bind_fields(RunConfig& c, std::string& output_dir) {
  Binder b;
  b.u64("run.seed", c.seed);
  b.text("run.run_id", c.run_id);
  b.text("run.output_dir", output_dir);
  b.size("run.threads", c.threads);

  b.size("cohort.n_patients", c.n_patients);
  b.size("cohort.latent_dim", c.latent_dim);
  b.size("cohort.biomarker_dim", c.biomarker_dim);
  b.num("cohort.pmci_prior", c.pmci_prior);
  b.num("cohort.autoregression", c.design.autoregression);
  b.num("cohort.pmci_drift", c.design.pmci_drift);
  b.num("cohort.pmci_magnitude_lo", c.design.pmci_magnitude_lo);
  b.num("cohort.pmci_magnitude_hi", c.design.pmci_magnitude_hi);
  b.num("cohort.smci_drift", c.design.smci_drift);
  b.num("cohort.process_noise", c.design.process_noise);
  b.num("cohort.pmci_baseline_shift", c.design.pmci_baseline_shift);
  b.num("cohort.pmci_baseline_scale", c.design.pmci_baseline_scale);
  b.num("cohort.readout_emphasis", c.design.readout_emphasis);
  b.num("cohort.observation_noise", c.design.observation_noise);
  b.num("cohort.complete_fraction", c.missingness.complete);
  b.num("cohort.intermediate_fraction", c.missingness.intermediate);
  b.num("cohort.final_fraction", c.missingness.final_suffix);
  b.nums("cohort.gap_count_weights", c.missingness.count_weights.data(), c.missingness.count_weights.size());
  b.num("cohort.domain_shift", c.domain_shift);

  b.size("diffusion.hidden", c.hidden);
  b.size("diffusion.steps", c.diffusion_steps);
  b.num("diffusion.beta_start", c.beta_start);
  b.num("diffusion.beta_end", c.beta_end);

  b.size("curriculum.max_difficulty", c.max_difficulty);
  b.sizes("curriculum.epochs", c.epochs);
  b.size("curriculum.batch_size", c.batch_size);
  b.num("curriculum.learning_rate", c.learning_rate);

  b.size("guidance.bins", c.bins);
  b.size("guidance.embed_dim", c.embed_dim);
  b.size("guidance.candidates", c.candidates);
  b.size("guidance.scorer_epochs", c.scorer_epochs);
  b.num("guidance.scorer_learning_rate", c.scorer_learning_rate);

  b.num("classifier.l2", c.l2);
  b.size("classifier.iterations", c.classifier_iterations);
  b.num("classifier.learning_rate", c.classifier_learning_rate);

  b.flag("ablation.interpolation_task", c.ablation.interpolation_task);
  b.flag("ablation.interpolation_aug", c.ablation.interpolation_aug);
  b.flag("ablation.extrapolation_task", c.ablation.extrapolation_task);
  b.flag("ablation.extrapolation_aug", c.ablation.extrapolation_aug);
  b.flag("ablation.guidance", c.ablation.guidance);
  b.flag("ablation.feature_adaptation", c.ablation.feature_adaptation);
  return b;
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(!c.run_id.empty() && c.run_id.find_first_of(",\n\"") == std::string::npos,
          "run.run_id must be nonempty and free of commas, quotes and newlines");
  require(c.threads >= 1, "run.threads must be >= 1");
  require(c.n_patients >= 10, "cohort.n_patients must be >= 10");
  require(c.latent_dim >= 1 && c.biomarker_dim >= 1, "cohort dimensions must be positive");
  require(c.pmci_prior > 0.0 && c.pmci_prior < 1.0, "cohort.pmci_prior must be in (0,1)");
  require(c.domain_shift >= 0.0, "cohort.domain_shift must be >= 0");
  CohortConfig cc = make_cohort_config(c.design, c.seed, c.latent_dim, c.biomarker_dim);
  cc.n_patients = c.n_patients;
  cc.pmci_prior = c.pmci_prior;
  cc.missingness = c.missingness;
  validate(cc);
  require(c.hidden >= 1, "diffusion.hidden must be >= 1");
  require(c.diffusion_steps >= 1, "diffusion.steps must be >= 1");
  require(c.beta_start > 0.0 && c.beta_start <= c.beta_end && c.beta_end < 1.0,
          "diffusion beta range must satisfy 0 < beta_start <= beta_end < 1");
  require(c.max_difficulty >= 1 && c.max_difficulty <= kLastPosition, "curriculum.max_difficulty must be in 1..5");
  require(!c.epochs.empty(), "curriculum.epochs must list at least one value");
  require(c.batch_size >= 1, "curriculum.batch_size must be >= 1");
  require(c.learning_rate > 0.0, "curriculum.learning_rate must be positive");
  require(c.bins >= 2, "guidance.bins must be >= 2");
  require(c.embed_dim >= 1, "guidance.embed_dim must be >= 1");
  require(c.candidates >= 1, "guidance.candidates must be >= 1");
  require(c.scorer_learning_rate > 0.0, "guidance.scorer_learning_rate must be positive");
  require(c.l2 >= 0.0, "classifier.l2 must be >= 0");
  require(c.classifier_iterations >= 1, "classifier.iterations must be >= 1");
  require(c.classifier_learning_rate > 0.0, "classifier.learning_rate must be positive");
}

// Applies "section.key = value" pairs from INI text on top of `base`.
inline RunConfig parse_config(const std::string& ini_text, RunConfig base = {}) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(ini_text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  std::string output_dir = base.output_dir.string();
  detail::Binder binder = detail::bind_fields(base, output_dir);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("key '" + section + "' outside any section");
    for (const auto& [key, value] : body) binder.assign(section + "." + key, value.data());
  }
  base.output_dir = output_dir;
  validate(base);
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  return parse_config(text);
}

// Stable text form; equal configs serialize identically. Output directory and
// thread count are left out since they never change results.
inline std::string canonical_config(const RunConfig& c) {
  std::map<std::string, std::map<std::string, std::string>> s;
  using detail::format_double;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  s["run"]["seed"] = std::to_string(c.seed);
  s["run"]["run_id"] = c.run_id;
  s["cohort"]["n_patients"] = std::to_string(c.n_patients);
  s["cohort"]["latent_dim"] = std::to_string(c.latent_dim);
  s["cohort"]["biomarker_dim"] = std::to_string(c.biomarker_dim);
  s["cohort"]["pmci_prior"] = format_double(c.pmci_prior);
  s["cohort"]["autoregression"] = format_double(c.design.autoregression);
  s["cohort"]["pmci_drift"] = format_double(c.design.pmci_drift);
  s["cohort"]["pmci_magnitude_lo"] = format_double(c.design.pmci_magnitude_lo);
  s["cohort"]["pmci_magnitude_hi"] = format_double(c.design.pmci_magnitude_hi);
  s["cohort"]["smci_drift"] = format_double(c.design.smci_drift);
  s["cohort"]["process_noise"] = format_double(c.design.process_noise);
  s["cohort"]["pmci_baseline_shift"] = format_double(c.design.pmci_baseline_shift);
  s["cohort"]["pmci_baseline_scale"] = format_double(c.design.pmci_baseline_scale);
  s["cohort"]["readout_emphasis"] = format_double(c.design.readout_emphasis);
  s["cohort"]["observation_noise"] = format_double(c.design.observation_noise);
  s["cohort"]["complete_fraction"] = format_double(c.missingness.complete);
  s["cohort"]["intermediate_fraction"] = format_double(c.missingness.intermediate);
  s["cohort"]["final_fraction"] = format_double(c.missingness.final_suffix);
  s["cohort"]["gap_count_weights"] = detail::join_csv(c.missingness.count_weights);
  s["cohort"]["domain_shift"] = format_double(c.domain_shift);
  s["diffusion"]["hidden"] = std::to_string(c.hidden);
  s["diffusion"]["steps"] = std::to_string(c.diffusion_steps);
  s["diffusion"]["beta_start"] = format_double(c.beta_start);
  s["diffusion"]["beta_end"] = format_double(c.beta_end);
  s["curriculum"]["max_difficulty"] = std::to_string(c.max_difficulty);
  s["curriculum"]["epochs"] = detail::join_csv(c.epochs);
  s["curriculum"]["batch_size"] = std::to_string(c.batch_size);
  s["curriculum"]["learning_rate"] = format_double(c.learning_rate);
  s["guidance"]["bins"] = std::to_string(c.bins);
  s["guidance"]["embed_dim"] = std::to_string(c.embed_dim);
  s["guidance"]["candidates"] = std::to_string(c.candidates);
  s["guidance"]["scorer_epochs"] = std::to_string(c.scorer_epochs);
  s["guidance"]["scorer_learning_rate"] = format_double(c.scorer_learning_rate);
  s["classifier"]["l2"] = format_double(c.l2);
  s["classifier"]["iterations"] = std::to_string(c.classifier_iterations);
  s["classifier"]["learning_rate"] = format_double(c.classifier_learning_rate);
  s["ablation"]["interpolation_task"] = b(c.ablation.interpolation_task);
  s["ablation"]["interpolation_aug"] = b(c.ablation.interpolation_aug);
  s["ablation"]["extrapolation_task"] = b(c.ablation.extrapolation_task);
  s["ablation"]["extrapolation_aug"] = b(c.ablation.extrapolation_aug);
  s["ablation"]["guidance"] = b(c.ablation.guidance);
  s["ablation"]["feature_adaptation"] = b(c.ablation.feature_adaptation);

  std::string out;
  for (const auto& [section, keys] : s) {
    out += "[" + section + "]\n";
    for (const auto& [k, v] : keys) out += k + " = " + v + "\n";
  }
  return out;
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(canonical_config(c))); }

// Component configs derived from the run config.

inline CohortConfig cohort_config(const RunConfig& c) {
  CohortConfig cc = make_cohort_config(c.design, c.seed, c.latent_dim, c.biomarker_dim);
  cc.n_patients = c.n_patients;
  cc.pmci_prior = c.pmci_prior;
  cc.missingness = c.missingness;
  return cc;
}

inline CurriculumConfig curriculum_config(const RunConfig& c) {
  CurriculumConfig cc;
  cc.max_difficulty = c.max_difficulty;
  cc.epochs = c.epochs;
  cc.batch_size = c.batch_size;
  cc.optimizer.learning_rate = c.learning_rate;
  cc.interpolation_task = c.ablation.interpolation_task;
  cc.interpolation_aug = c.ablation.interpolation_aug;
  cc.extrapolation_task = c.ablation.extrapolation_task;
  cc.extrapolation_aug = c.ablation.extrapolation_aug;
  cc.threads = c.threads;
  cc.seed = derive_seed(c.seed, {seed_tag::kTrain});
  return cc;
}

inline ScorerConfig scorer_config(const RunConfig& c) {
  ScorerConfig s;
  s.embed_dim = c.embed_dim;
  s.epochs = c.scorer_epochs;
  s.learning_rate = c.scorer_learning_rate;
  s.seed = derive_seed(c.seed, {seed_tag::kScorer});
  return s;
}

inline ClassifierConfig classifier_config(const RunConfig& c) {
  ClassifierConfig k;
  k.l2 = c.l2;
  k.iterations = c.classifier_iterations;
  k.learning_rate = c.classifier_learning_rate;
  k.seed = derive_seed(c.seed, {seed_tag::kClassifier});
  return k;
}

}  // namespace trajdiff

#endif  // TRAJDIFF_CONFIG_HPP
