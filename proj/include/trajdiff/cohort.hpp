#ifndef TRAJDIFF_COHORT_HPP
#define TRAJDIFF_COHORT_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajdiff/errors.hpp"
#include "trajdiff/io_util.hpp"
#include "trajdiff/rng.hpp"
#include "trajdiff/tensor.hpp"

namespace trajdiff {

using Vec = std::vector<double>;

// Fixed visit schedule. Models index positions, never months.
inline constexpr std::size_t kGridLength = 6;
inline constexpr std::array<int, kGridLength> kVisitMonths{0, 6, 12, 18, 24, 36};
inline constexpr std::size_t kLastPosition = kGridLength - 1;

enum class Label { pMCI, sMCI };

inline const char* to_string(Label l) { return l == Label::pMCI ? "pMCI" : "sMCI"; }
inline Label parse_label(const std::string& s) {
  if (s == "pMCI") return Label::pMCI;
  if (s == "sMCI") return Label::sMCI;
  throw DataError("unknown label '" + s + "'");
}
// pMCI is the positive class everywhere.
inline int label_value(Label l) { return l == Label::pMCI ? 1 : 0; }

enum class Provenance { observed, imputed };

struct TrajectoryRecord {
  std::string patient_id;
  Label label = Label::sMCI;
  std::array<std::optional<Vec>, kGridLength> latents;
  std::array<std::optional<Vec>, kGridLength> biomarkers;
  std::array<Provenance, kGridLength> flags{};

  bool present(std::size_t pos) const { return latents[pos].has_value(); }
  std::array<bool, kGridLength> mask() const {
    std::array<bool, kGridLength> m{};
    for (std::size_t i = 0; i < kGridLength; ++i) m[i] = present(i);
    return m;
  }
  bool complete() const {
    for (std::size_t i = 0; i < kGridLength; ++i)
      if (!present(i)) return false;
    return true;
  }
  std::vector<std::size_t> absent_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < kGridLength; ++i)
      if (!present(i)) out.push_back(i);
    return out;
  }

  friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

// Throws DataError when a record breaks the structural invariants.
inline void validate_record(const TrajectoryRecord& r, std::size_t latent_dim, std::size_t biomarker_dim) {
  if (!r.present(0)) throw DataError("record " + r.patient_id + ": baseline latent missing");
  for (std::size_t i = 0; i < kGridLength; ++i) {
    if (r.latents[i] && r.latents[i]->size() != latent_dim)
      throw DataError("record " + r.patient_id + ": latent dimension mismatch at position " + std::to_string(i));
    if (r.biomarkers[i] && r.biomarkers[i]->size() != biomarker_dim)
      throw DataError("record " + r.patient_id + ": biomarker dimension mismatch at position " + std::to_string(i));
    if (r.flags[i] == Provenance::imputed && !r.present(i))
      throw DataError("record " + r.patient_id + ": imputed flag on absent position " + std::to_string(i));
  }
}

// Missingness strata. `mixed` records never come out of the generator but may
// appear in hand-built data.
enum class Stratum { complete, intermediate, final_suffix, mixed };

struct MissingnessPattern {
  Stratum stratum = Stratum::complete;
  std::size_t count = 0;  // d
};

inline MissingnessPattern classify_missingness(const std::array<bool, kGridLength>& mask) {
  std::size_t missing = 0;
  for (bool p : mask) missing += p ? 0 : 1;
  if (missing == 0) return {Stratum::complete, 0};
  // Suffix {6-d..5}?
  bool suffix = true;
  for (std::size_t i = 0; i < kGridLength; ++i) {
    const bool should_be_missing = i >= kGridLength - missing;
    if (mask[i] == should_be_missing) suffix = false;
  }
  if (suffix && missing < kGridLength) return {Stratum::final_suffix, missing};
  bool intermediate = mask[0] && mask[kLastPosition];
  if (intermediate) return {Stratum::intermediate, missing};
  return {Stratum::mixed, missing};
}

inline MissingnessPattern classify_missingness(const TrajectoryRecord& r) {
  return classify_missingness(r.mask());
}

struct ClassDynamics {
  Tensor drift_matrix;  // A, D x D
  Vec drift_bias;       // b, scaled per patient by a magnitude drawn from [lo, hi]
  double magnitude_lo = 1.0;
  double magnitude_hi = 1.0;
  double process_noise = 0.0;  // sigma_proc
  Vec baseline_mean;
  Vec baseline_scale;  // Z0 = mean + scale * N(0, I)
};

struct MissingnessSpec {
  double complete = 0.4;
  double intermediate = 0.3;
  double final_suffix = 0.3;
  // Relative weights of d = 1..4 within the gap strata.
  std::array<double, 4> count_weights{1.0, 1.0, 1.0, 1.0};
};

struct CohortConfig {
  std::size_t n_patients = 1000;
  std::size_t latent_dim = 16;
  std::size_t biomarker_dim = 8;
  double pmci_prior = 0.4;
  ClassDynamics pmci;
  ClassDynamics smci;
  Tensor biomarker_map;  // W, B x D
  double observation_noise = 0.0;
  MissingnessSpec missingness;
  std::uint64_t seed = 0;
};

namespace detail {
inline void validate_dynamics(const ClassDynamics& c, std::size_t d, const char* which) {
  auto fail = [&](const std::string& m) { throw ConfigError(std::string(which) + " dynamics: " + m); };
  if (c.drift_matrix.shape() != Shape{d, d}) fail("drift matrix must be DxD");
  if (c.drift_bias.size() != d) fail("drift bias must have D entries");
  if (c.baseline_mean.size() != d || c.baseline_scale.size() != d) fail("baseline mean/scale must have D entries");
  if (!(c.process_noise >= 0.0)) fail("process noise must be >= 0");
  if (!(c.magnitude_lo <= c.magnitude_hi)) fail("magnitude range inverted");
  for (double s : c.baseline_scale)
    if (!(s >= 0.0)) fail("baseline scale must be >= 0");
}
}  // namespace detail

inline void validate(const CohortConfig& c) {
  if (c.n_patients == 0) throw ConfigError("cohort: n_patients must be positive");
  if (c.latent_dim == 0 || c.biomarker_dim == 0) throw ConfigError("cohort: dimensions must be positive");
  if (!(c.pmci_prior >= 0.0 && c.pmci_prior <= 1.0)) throw ConfigError("cohort: class prior outside [0,1]");
  detail::validate_dynamics(c.pmci, c.latent_dim, "pMCI");
  detail::validate_dynamics(c.smci, c.latent_dim, "sMCI");
  if (c.biomarker_map.shape() != Shape{c.biomarker_dim, c.latent_dim})
    throw ConfigError("cohort: biomarker map must be BxD");
  if (!(c.observation_noise >= 0.0)) throw ConfigError("cohort: observation noise must be >= 0");
  const auto& m = c.missingness;
  for (double w : {m.complete, m.intermediate, m.final_suffix})
    if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("cohort: stratum weight outside [0,1]");
  if (std::abs(m.complete + m.intermediate + m.final_suffix - 1.0) > 1e-9)
    throw ConfigError("cohort: stratum weights must sum to 1");
  double cw = 0.0;
  for (double w : m.count_weights) {
    if (!(w >= 0.0)) throw ConfigError("cohort: count weights must be >= 0");
    cw += w;
  }
  if (!(cw > 0.0)) throw ConfigError("cohort: count weights must not all be zero");
}

// Number of latent directions carrying the pMCI atrophy drift.
inline constexpr std::size_t kAtrophyDirections = 4;

// Scalar knobs behind the default cohort. pMCI patients drift along the first
// four latent axes at a per-patient rate, and their baselines are more
// dispersed along the same axes, so the class is only weakly linear in Z0.
struct CohortDesign {
  double autoregression = 0.97;
  double pmci_drift = 0.35;
  double pmci_magnitude_lo = 0.5;
  double pmci_magnitude_hi = 1.5;
  double smci_drift = 0.03;
  double process_noise = 0.15;
  double pmci_baseline_shift = 0.0;
  double pmci_baseline_scale = 2.2;
  double readout_emphasis = 0.6;
  double observation_noise = 0.1;
};

inline CohortConfig make_cohort_config(const CohortDesign& design, std::uint64_t seed = 0,
                                       std::size_t latent_dim = 16, std::size_t biomarker_dim = 8) {
  CohortConfig c;
  c.latent_dim = latent_dim;
  c.biomarker_dim = biomarker_dim;
  c.seed = seed;
  const std::size_t d = latent_dim;
  const std::size_t k = std::min(kAtrophyDirections, d);

  auto make = [&](double drift, double lo, double hi, double mean_shift, double atrophy_scale) {
    ClassDynamics dyn;
    dyn.drift_matrix = Tensor::matrix(d, d);
    for (std::size_t i = 0; i < d; ++i) dyn.drift_matrix.at(i, i) = design.autoregression;
    dyn.drift_bias.assign(d, 0.0);
    dyn.baseline_mean.assign(d, 0.0);
    dyn.baseline_scale.assign(d, 1.0);
    for (std::size_t i = 0; i < k; ++i) {
      dyn.drift_bias[i] = -drift;
      dyn.baseline_mean[i] = -mean_shift;
      dyn.baseline_scale[i] = atrophy_scale;
    }
    dyn.magnitude_lo = lo;
    dyn.magnitude_hi = hi;
    dyn.process_noise = design.process_noise;
    return dyn;
  };
  c.pmci = make(design.pmci_drift, design.pmci_magnitude_lo, design.pmci_magnitude_hi, design.pmci_baseline_shift,
                design.pmci_baseline_scale);
  c.smci = make(design.smci_drift, 1.0, 1.0, 0.0, 1.0);

  // Readout map is part of the cohort's structure, not of the sample: it is
  // drawn from a fixed stream so every root seed shares it.
  Rng rng(derive_seed(0x5eed0fb10ULL, {biomarker_dim, latent_dim}));
  c.biomarker_map = Tensor::matrix(biomarker_dim, d);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& w : c.biomarker_map.data()) w = s * rng.normal();
  // Make the atrophy axes clearly visible in the readout.
  for (std::size_t b = 0; b < biomarker_dim; ++b)
    for (std::size_t i = 0; i < k; ++i) c.biomarker_map.at(b, i) += (b % k == i ? design.readout_emphasis : 0.0);
  c.observation_noise = design.observation_noise;
  return c;
}

inline CohortConfig default_cohort_config(std::uint64_t seed = 0, std::size_t latent_dim = 16,
                                          std::size_t biomarker_dim = 8) {
  return make_cohort_config(CohortDesign{}, seed, latent_dim, biomarker_dim);
}

// Shifted copy for a held-out domain: every drift and the process noise are
// scaled by (1 + shift).
inline CohortConfig shifted_dynamics(CohortConfig c, double shift) {
  if (!(shift >= 0.0)) throw ConfigError("cohort: domain shift must be >= 0");
  for (ClassDynamics* dyn : {&c.pmci, &c.smci}) {
    for (double& b : dyn->drift_bias) b *= 1.0 + shift;
    dyn->process_noise *= 1.0 + shift;
  }
  return c;
}

inline std::string patient_id_for(std::size_t index) {
  std::ostringstream os;
  os << "P" << std::string(index < 10000 ? 5 - std::to_string(index).size() : 0, '0') << index;
  return os.str();
}

inline Vec readout(const Tensor& map, const Vec& z) {
  Vec y(map.rows(), 0.0);
  for (std::size_t b = 0; b < map.rows(); ++b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < map.cols(); ++j) acc += map.at(b, j) * z[j];
    y[b] = acc;
  }
  return y;
}

// Fully observed trajectory from the class dynamics.
inline TrajectoryRecord simulate_patient(const CohortConfig& config, Label label, Rng& rng,
                                         std::string patient_id = "P00000") {
  const ClassDynamics& dyn = label == Label::pMCI ? config.pmci : config.smci;
  const std::size_t d = config.latent_dim;
  TrajectoryRecord r;
  r.patient_id = std::move(patient_id);
  r.label = label;

  Vec z(d);
  for (std::size_t j = 0; j < d; ++j) z[j] = dyn.baseline_mean[j] + dyn.baseline_scale[j] * rng.normal();
  const double magnitude = dyn.magnitude_lo == dyn.magnitude_hi
                               ? dyn.magnitude_lo
                               : rng.uniform(dyn.magnitude_lo, dyn.magnitude_hi);

  auto observe = [&](const Vec& latent) {
    Vec y = readout(config.biomarker_map, latent);
    if (config.observation_noise > 0.0)
      for (double& v : y) v += config.observation_noise * rng.normal();
    return y;
  };

  r.latents[0] = z;
  r.biomarkers[0] = observe(z);
  for (std::size_t pos = 1; pos < kGridLength; ++pos) {
    Vec next(d);
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += dyn.drift_matrix.at(i, j) * z[j];
      next[i] = acc + magnitude * dyn.drift_bias[i];
    }
    if (dyn.process_noise > 0.0)
      for (double& v : next) v += dyn.process_noise * rng.normal();
    z = std::move(next);
    r.latents[pos] = z;
    r.biomarkers[pos] = observe(z);
  }
  r.flags.fill(Provenance::observed);
  return r;
}

inline void drop_position(TrajectoryRecord& r, std::size_t pos) {
  r.latents[pos].reset();
  r.biomarkers[pos].reset();
  r.flags[pos] = Provenance::observed;
}

// Assigns the record to one stratum and removes the matching positions.
inline TrajectoryRecord apply_missingness(TrajectoryRecord record, const MissingnessSpec& spec, Rng& rng) {
  const double u = rng.uniform();
  if (u < spec.complete) return record;
  const bool intermediate = u < spec.complete + spec.intermediate;

  std::discrete_distribution<std::size_t> count_dist(spec.count_weights.begin(), spec.count_weights.end());
  const std::size_t d = count_dist(rng.engine()) + 1;
  if (intermediate) {
    std::array<std::size_t, 4> slots{1, 2, 3, 4};
    std::shuffle(slots.begin(), slots.end(), rng.engine());
    for (std::size_t k = 0; k < d; ++k) drop_position(record, slots[k]);
  } else {
    for (std::size_t pos = kGridLength - d; pos < kGridLength; ++pos) drop_position(record, pos);
  }
  return record;
}

inline TrajectoryRecord apply_missingness(TrajectoryRecord record, const CohortConfig& config, Rng& rng) {
  return apply_missingness(std::move(record), config.missingness, rng);
}

struct Cohort {
  std::vector<TrajectoryRecord> observed;      // after missingness
  std::vector<TrajectoryRecord> ground_truth;  // fully observed
};

struct PatientDraw {
  TrajectoryRecord observed;
  TrajectoryRecord ground_truth;
};

// Patient p draws from its own streams seeded by hash(seed, p), so any subset
// of patients can be regenerated independently.
inline PatientDraw generate_patient(const CohortConfig& config, std::size_t p) {
  Rng rng(derive_seed(config.seed, {seed_tag::kCohort, p}));
  const Label label = rng.uniform() < config.pmci_prior ? Label::pMCI : Label::sMCI;
  TrajectoryRecord truth = simulate_patient(config, label, rng, patient_id_for(p));
  Rng miss_rng(derive_seed(config.seed, {seed_tag::kMissing, p}));
  TrajectoryRecord observed = apply_missingness(truth, config, miss_rng);
  return {std::move(observed), std::move(truth)};
}

inline Cohort generate_cohort(const CohortConfig& config) {
  validate(config);
  Cohort out;
  out.observed.reserve(config.n_patients);
  out.ground_truth.reserve(config.n_patients);
  for (std::size_t p = 0; p < config.n_patients; ++p) {
    PatientDraw draw = generate_patient(config, p);
    out.observed.push_back(std::move(draw.observed));
    out.ground_truth.push_back(std::move(draw.ground_truth));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: one JSON object per line. An optional leading header line
// carries the schema version and the producing config's hash.

struct ArtifactHeader {
  std::string artifact;
  int schema_version = kSchemaVersion;
  std::string config_hash;
};

inline nlohmann::ordered_json header_to_json(const ArtifactHeader& h) {
  return {{"artifact", h.artifact}, {"schema_version", h.schema_version}, {"config_hash", h.config_hash}};
}

inline nlohmann::ordered_json record_to_json(const TrajectoryRecord& r) {
  nlohmann::ordered_json j;
  j["patient_id"] = r.patient_id;
  j["label"] = to_string(r.label);
  auto slots = [](const std::array<std::optional<Vec>, kGridLength>& a) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& v : a) arr.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr));
    return arr;
  };
  j["latents"] = slots(r.latents);
  j["biomarkers"] = slots(r.biomarkers);
  nlohmann::ordered_json mask = nlohmann::ordered_json::array();
  nlohmann::ordered_json flags = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < kGridLength; ++i) {
    mask.push_back(r.present(i) ? 1 : 0);
    flags.push_back(r.flags[i] == Provenance::imputed ? "imp" : "obs");
  }
  j["mask"] = mask;
  j["flags"] = flags;
  return j;
}

inline TrajectoryRecord record_from_json(const nlohmann::json& j) {
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
    return j.at(key);
  };
  TrajectoryRecord r;
  r.patient_id = need("patient_id").get<std::string>();
  r.label = parse_label(need("label").get<std::string>());
  auto slots = [&](const char* key, std::array<std::optional<Vec>, kGridLength>& out) {
    const auto& arr = need(key);
    if (!arr.is_array() || arr.size() != kGridLength)
      throw DataError(std::string("field '") + key + "' must have 6 entries");
    for (std::size_t i = 0; i < kGridLength; ++i) {
      if (arr[i].is_null()) continue;
      if (!arr[i].is_array()) throw DataError(std::string("field '") + key + "' entries must be arrays or null");
      out[i] = arr[i].get<Vec>();
    }
  };
  slots("latents", r.latents);
  slots("biomarkers", r.biomarkers);
  const auto& mask = need("mask");
  const auto& flags = need("flags");
  if (!mask.is_array() || mask.size() != kGridLength) throw DataError("field 'mask' must have 6 entries");
  if (!flags.is_array() || flags.size() != kGridLength) throw DataError("field 'flags' must have 6 entries");
  for (std::size_t i = 0; i < kGridLength; ++i) {
    const int m = mask[i].get<int>();
    if (m != 0 && m != 1) throw DataError("mask entries must be 0 or 1");
    if ((m == 1) != r.present(i)) throw DataError("mask inconsistent with latents at position " + std::to_string(i));
    const std::string f = flags[i].get<std::string>();
    if (f == "obs") r.flags[i] = Provenance::observed;
    else if (f == "imp") r.flags[i] = Provenance::imputed;
    else throw DataError("unknown flag '" + f + "'");
  }
  if (!r.present(0)) throw DataError("baseline latent missing for " + r.patient_id);
  return r;
}

inline std::string serialize_cohort(const std::vector<TrajectoryRecord>& records,
                                    const std::optional<ArtifactHeader>& header = std::nullopt) {
  std::string out;
  if (header) out += header_to_json(*header).dump() + "\n";
  for (const auto& r : records) out += record_to_json(r).dump() + "\n";
  return out;
}

struct CohortFile {
  std::optional<ArtifactHeader> header;
  std::vector<TrajectoryRecord> records;
};

inline CohortFile parse_cohort(const std::string& text) {
  CohortFile out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      if (line_no == 1 && j.contains("schema_version")) {
        ArtifactHeader h;
        h.artifact = j.value("artifact", "");
        h.schema_version = j.at("schema_version").get<int>();
        h.config_hash = j.value("config_hash", "");
        if (h.schema_version != kSchemaVersion)
          throw DataError("unsupported schema_version " + std::to_string(h.schema_version));
        out.header = h;
        continue;
      }
      out.records.push_back(record_from_json(j));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline void write_cohort(const std::vector<TrajectoryRecord>& records, const std::filesystem::path& path,
                         const std::optional<ArtifactHeader>& header = std::nullopt) {
  write_file_atomic(path, serialize_cohort(records, header));
}

inline CohortFile read_cohort_file(const std::filesystem::path& path) { return parse_cohort(read_file(path)); }

inline std::vector<TrajectoryRecord> read_cohort(const std::filesystem::path& path) {
  return read_cohort_file(path).records;
}

// ---------------------------------------------------------------------------
// Statistics

// Linear interpolation between closest ranks (q in [0, 100]).
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("percentile of empty sample");
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Same definition via selection instead of a full sort.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of empty sample");
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  if (lo + 1 >= values.size()) return a;
  const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + (pos - static_cast<double>(lo)) * (b - a);
}

struct RegressionPairs {
  std::vector<Vec> baseline;  // y_0
  std::vector<Vec> target;    // y_tau
};

struct CohortStats {
  std::size_t latent_dim = 0;
  std::size_t biomarker_dim = 0;
  Vec latent_lo;  // 0.5th percentile per dimension
  Vec latent_hi;  // 99.5th percentile per dimension
  std::array<std::size_t, kGridLength> latent_counts{};
  std::array<Vec, kGridLength> biomarker_mean;
  std::array<Vec, kGridLength> biomarker_std;
  std::array<std::size_t, kGridLength> biomarker_counts{};
  std::array<RegressionPairs, kGridLength> pairs;  // index 0 unused
};

// Per-dimension observed latent values (imputed values excluded).
inline std::vector<Vec> observed_latent_columns(const std::vector<TrajectoryRecord>& records, std::size_t dim) {
  std::vector<Vec> cols(dim);
  for (const auto& r : records)
    for (std::size_t pos = 0; pos < kGridLength; ++pos)
      if (r.present(pos) && r.flags[pos] == Provenance::observed)
        for (std::size_t j = 0; j < dim; ++j) cols[j].push_back((*r.latents[pos])[j]);
  return cols;
}

inline CohortStats cohort_stats(const std::vector<TrajectoryRecord>& records, double lo_q = 0.5, double hi_q = 99.5) {
  if (records.empty()) throw std::invalid_argument("cohort_stats: empty cohort");
  CohortStats s;
  s.latent_dim = records.front().latents[0]->size();
  for (const auto& r : records)
    for (std::size_t pos = 0; pos < kGridLength; ++pos)
      if (r.biomarkers[pos]) {
        s.biomarker_dim = r.biomarkers[pos]->size();
        break;
      }

  auto cols = observed_latent_columns(records, s.latent_dim);
  for (std::size_t j = 0; j < s.latent_dim; ++j) {
    s.latent_lo.push_back(percentile(cols[j], lo_q));
    s.latent_hi.push_back(percentile(cols[j], hi_q));
  }
  for (const auto& r : records)
    for (std::size_t pos = 0; pos < kGridLength; ++pos)
      if (r.present(pos) && r.flags[pos] == Provenance::observed) ++s.latent_counts[pos];

  const std::size_t b = s.biomarker_dim;
  for (std::size_t pos = 0; pos < kGridLength; ++pos) {
    Vec sum(b, 0.0);
    std::size_t n = 0;
    for (const auto& r : records)
      if (r.biomarkers[pos]) {
        for (std::size_t k = 0; k < b; ++k) sum[k] += (*r.biomarkers[pos])[k];
        ++n;
      }
    s.biomarker_counts[pos] = n;
    Vec mean(b, 0.0), sd(b, 0.0);
    if (n > 0) {
      for (std::size_t k = 0; k < b; ++k) mean[k] = sum[k] / static_cast<double>(n);
      Vec ss(b, 0.0);
      for (const auto& r : records)
        if (r.biomarkers[pos])
          for (std::size_t k = 0; k < b; ++k) {
            const double dlt = (*r.biomarkers[pos])[k] - mean[k];
            ss[k] += dlt * dlt;
          }
      for (std::size_t k = 0; k < b; ++k) sd[k] = std::sqrt(ss[k] / static_cast<double>(n));
    }
    s.biomarker_mean[pos] = mean;
    s.biomarker_std[pos] = sd;
    if (pos == 0) continue;
    for (const auto& r : records)
      if (r.biomarkers[0] && r.biomarkers[pos]) {
        s.pairs[pos].baseline.push_back(*r.biomarkers[0]);
        s.pairs[pos].target.push_back(*r.biomarkers[pos]);
      }
  }
  return s;
}

// ---------------------------------------------------------------------------
// 70/10/20 patient split.

struct CohortSplit {
  std::vector<std::size_t> train, validation, test;  // indices into the cohort
};

inline CohortSplit split_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, {seed_tag::kSplit}));
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  const std::size_t n_train = n * 7 / 10;
  const std::size_t n_val = n / 10;
  CohortSplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                      idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  for (auto* part : {&s.train, &s.validation, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

template <class T>
std::vector<T> gather(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

}  // namespace trajdiff

#endif  // TRAJDIFF_COHORT_HPP
