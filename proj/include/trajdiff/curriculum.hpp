#ifndef TRAJDIFF_CURRICULUM_HPP
#define TRAJDIFF_CURRICULUM_HPP

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajdiff/cohort.hpp"
#include "trajdiff/diffusion.hpp"
#include "trajdiff/log.hpp"
#include "trajdiff/optim.hpp"
#include "trajdiff/parallel.hpp"
#include "trajdiff/rng.hpp"

namespace trajdiff {

enum class Phase { interpolation, extrapolation };

inline const char* to_string(Phase p) { return p == Phase::interpolation ? "interpolation" : "extrapolation"; }

struct CurriculumConfig {
  std::size_t max_difficulty = 4;
  // Epochs per difficulty level, d = 1..; the last entry repeats.
  std::vector<std::size_t> epochs{20, 16, 13, 10};
  std::size_t batch_size = 64;
  AdamConfig optimizer{};
  bool interpolation_task = true;
  bool interpolation_aug = true;
  bool extrapolation_task = true;
  bool extrapolation_aug = true;
  std::size_t threads = 1;
  std::uint64_t seed = 0;

  std::size_t epochs_at(std::size_t d) const {
    if (epochs.empty()) return 0;
    return epochs[std::min(d, epochs.size()) - 1];
  }
};

inline void validate(const CurriculumConfig& c) {
  if (c.max_difficulty < 1 || c.max_difficulty > kLastPosition)
    throw ConfigError("curriculum: max difficulty must be in 1..5");
  if (c.batch_size == 0) throw ConfigError("curriculum: batch size must be positive");
  if (c.epochs.empty()) throw ConfigError("curriculum: epochs list is empty");
  if (!(c.optimizer.learning_rate > 0.0)) throw ConfigError("curriculum: learning rate must be positive");
}

struct AugmentationEntry {
  std::string patient_id;
  Phase phase = Phase::interpolation;
  std::size_t difficulty = 1;
  std::vector<std::size_t> positions;
};

struct PhaseSummary {
  std::size_t index = 0;
  Phase phase = Phase::interpolation;
  std::size_t difficulty = 1;
  std::size_t epochs = 0;
  bool trained = false;
  bool augmented = false;
  double mean_loss = 0.0;  // over the last epoch
  std::size_t dataset_before = 0;
  std::size_t dataset_after = 0;
  std::size_t imputed_records = 0;
};

struct CurriculumState {
  std::vector<TrajectoryRecord> dataset;  // D
  std::size_t difficulty = 1;
  std::size_t max_difficulty = 4;
  Phase phase = Phase::interpolation;
  std::vector<PhaseSummary> phases;
  std::vector<AugmentationEntry> augmentation_log;
};

// Complete records of the pool, in pool order.
inline std::vector<TrajectoryRecord> select_complete(const std::vector<TrajectoryRecord>& pool) {
  std::vector<TrajectoryRecord> out;
  for (const auto& r : pool)
    if (r.complete()) out.push_back(r);
  if (out.empty()) warn("curriculum: no complete sequences in the pool; training starts from an empty set");
  return out;
}

// Uniform size-d subset of the intermediate positions {1..4}.
inline std::array<bool, kGridLength> draw_interpolation_mask(std::size_t d, Rng& rng) {
  if (d < 1 || d > kGridLength - 2) throw std::out_of_range("interpolation difficulty must be in 1..4");
  std::array<std::size_t, kGridLength - 2> slots{1, 2, 3, 4};
  // Partial Fisher-Yates.
  for (std::size_t k = 0; k < d; ++k) std::swap(slots[k], slots[k + rng.index(0, slots.size() - 1 - k)]);
  std::array<bool, kGridLength> mask{};
  for (std::size_t k = 0; k < d; ++k) mask[slots[k]] = true;
  return mask;
}

inline DenoisingSample draw_interpolation_sample(const TrajectoryRecord& r, std::size_t d, std::size_t steps,
                                                 std::size_t dim, Rng& rng) {
  const auto mask = draw_interpolation_mask(d, rng);
  std::vector<std::size_t> chosen;
  for (std::size_t pos = 1; pos < kLastPosition; ++pos)
    if (mask[pos]) chosen.push_back(pos);
  const std::size_t target = chosen[rng.index(0, chosen.size() - 1)];
  DenoisingSample s;
  s.condition = make_condition(r, target, mask);
  s.z0 = *r.latents[target];
  s.t = rng.index(1, steps);
  s.epsilon.resize(dim);
  for (double& v : s.epsilon) v = rng.normal();
  return s;
}

inline DenoisingSample draw_extrapolation_sample(const TrajectoryRecord& r, std::size_t d, std::size_t steps,
                                                 std::size_t dim, Rng& rng) {
  const std::size_t target = rng.index(kGridLength - d, kLastPosition);
  const std::size_t t = rng.index(1, steps);
  Vec eps(dim);
  for (double& v : eps) v = rng.normal();
  return extrapolation_sample(r, d, target, t, std::move(eps));
}

namespace detail {

template <Denoiser M, class Draw>
double train_epochs(M& model, Adam& adam, const NoiseSchedule& schedule, const std::vector<TrajectoryRecord>& data,
                    std::size_t epochs, std::size_t batch_size, std::uint64_t phase_seed, Draw&& draw) {
  double last_epoch_loss = 0.0;
  if (data.empty()) return last_epoch_loss;
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(derive_seed(phase_seed, {epoch}));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    std::size_t count = 0;
    std::vector<DenoisingSample> batch;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      batch.clear();
      const std::size_t stop = std::min(order.size(), start + batch_size);
      for (std::size_t k = start; k < stop; ++k) batch.push_back(draw(data[order[k]], rng));
      LossAndGrads lg = model.loss_and_grads(schedule, batch);
      adam.step(model.parameters(), lg.grads);
      total += lg.loss * static_cast<double>(batch.size());
      count += batch.size();
    }
    last_epoch_loss = total / static_cast<double>(count);
  }
  return last_epoch_loss;
}

}  // namespace detail

template <Denoiser M>
double train_interpolation_phase(M& model, Adam& adam, const NoiseSchedule& schedule,
                                 const std::vector<TrajectoryRecord>& data, std::size_t d, std::size_t epochs,
                                 std::size_t batch_size, std::uint64_t phase_seed) {
  if (d < 1 || d > kGridLength - 2) throw std::out_of_range("interpolation difficulty must be in 1..4");
  const std::size_t dim = model.latent_dim(), steps = schedule.steps();
  return detail::train_epochs(model, adam, schedule, data, epochs, batch_size, phase_seed,
                              [&](const TrajectoryRecord& r, Rng& rng) {
                                return draw_interpolation_sample(r, d, steps, dim, rng);
                              });
}

template <Denoiser M>
double train_extrapolation_phase(M& model, Adam& adam, const NoiseSchedule& schedule,
                                 const std::vector<TrajectoryRecord>& data, std::size_t d, std::size_t epochs,
                                 std::size_t batch_size, std::uint64_t phase_seed) {
  if (d < 1 || d > kLastPosition) throw std::out_of_range("extrapolation difficulty must be in 1..5");
  const std::size_t dim = model.latent_dim(), steps = schedule.steps();
  return detail::train_epochs(model, adam, schedule, data, epochs, batch_size, phase_seed,
                              [&](const TrajectoryRecord& r, Rng& rng) {
                                return draw_extrapolation_sample(r, d, steps, dim, rng);
                              });
}

struct ImputationResult {
  std::vector<TrajectoryRecord> records;  // completed, in pool order
  std::vector<AugmentationEntry> log;
};

namespace detail {

// Fills the absent positions in increasing order; each draw conditions on the
// observed values plus earlier imputations. Seeds: hash(seed, patient, position).
template <Denoiser M>
ImputationResult impute_records(const ReverseSampler<M>& sampler, const std::vector<TrajectoryRecord>& pool,
                                Stratum stratum, std::size_t d, Phase phase, std::uint64_t seed,
                                std::size_t threads) {
  std::vector<std::size_t> matches;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const MissingnessPattern pat = classify_missingness(pool[i]);
    if (pat.stratum == stratum && pat.count == d) matches.push_back(i);
  }
  std::vector<TrajectoryRecord> done(matches.size());
  parallel_for(matches.size(), threads, [&](std::size_t k) {
    TrajectoryRecord r = pool[matches[k]];
    const std::uint64_t pid = fnv1a64(r.patient_id);
    for (std::size_t pos : pool[matches[k]].absent_positions()) {
      const TaskMode mode = phase == Phase::interpolation ? TaskMode::interpolation : TaskMode::extrapolation;
      const ConditionSequence c = build_condition(r, pos, mode);
      r.latents[pos] = sampler.sample(c, derive_seed(seed, {seed_tag::kImpute, pid, pos}));
      r.flags[pos] = Provenance::imputed;
    }
    done[k] = std::move(r);
  });
  ImputationResult out;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    out.log.push_back({done[k].patient_id, phase, d, pool[matches[k]].absent_positions()});
    out.records.push_back(std::move(done[k]));
  }
  return out;
}

}  // namespace detail

// Records missing exactly d intermediate positions.
template <Denoiser M>
ImputationResult impute_intermediate(const M& model, const NoiseSchedule& schedule,
                                     const std::vector<TrajectoryRecord>& pool, std::size_t d, std::uint64_t seed,
                                     std::size_t threads = 1) {
  ReverseSampler<M> sampler(model, schedule);
  return detail::impute_records(sampler, pool, Stratum::intermediate, d, Phase::interpolation, seed, threads);
}

// Records whose absent set is exactly the suffix of length d.
template <Denoiser M>
ImputationResult impute_final(const M& model, const NoiseSchedule& schedule, const std::vector<TrajectoryRecord>& pool,
                              std::size_t d, std::uint64_t seed, std::size_t threads = 1) {
  ReverseSampler<M> sampler(model, schedule);
  return detail::impute_records(sampler, pool, Stratum::final_suffix, d, Phase::extrapolation, seed, threads);
}

// Alternating train/augment loop over d = 1..D_max:
// interpolation train, interpolation augment, extrapolation train,
// extrapolation augment.
template <Denoiser M>
CurriculumState run_curriculum(M& model, const NoiseSchedule& schedule, const std::vector<TrajectoryRecord>& pool,
                               const CurriculumConfig& config) {
  validate(config);
  CurriculumState state;
  state.max_difficulty = config.max_difficulty;
  state.dataset = select_complete(pool);
  std::unordered_set<std::string> in_dataset;
  for (const auto& r : state.dataset) in_dataset.insert(r.patient_id);

  Adam adam(model.parameters(), config.optimizer);
  std::size_t phase_index = 0;

  auto augment = [&](ImputationResult&& res, PhaseSummary& summary) {
    for (std::size_t k = 0; k < res.records.size(); ++k) {
      if (!in_dataset.insert(res.records[k].patient_id).second) continue;
      state.dataset.push_back(std::move(res.records[k]));
      state.augmentation_log.push_back(res.log[k]);
      ++summary.imputed_records;
    }
  };

  for (std::size_t d = 1; d <= config.max_difficulty; ++d) {
    state.difficulty = d;
    for (Phase phase : {Phase::interpolation, Phase::extrapolation}) {
      state.phase = phase;
      const bool interp = phase == Phase::interpolation;
      const bool task = interp ? config.interpolation_task : config.extrapolation_task;
      const bool aug = interp ? config.interpolation_aug : config.extrapolation_aug;
      // Interpolation needs d intermediate slots; there are only four.
      const bool feasible = interp ? d <= kGridLength - 2 : d <= kLastPosition;
      if (!task) continue;
      PhaseSummary summary;
      summary.index = phase_index++;
      summary.phase = phase;
      summary.difficulty = d;
      summary.dataset_before = state.dataset.size();
      if (feasible) {
        summary.epochs = config.epochs_at(d);
        summary.trained = true;
        const std::uint64_t phase_seed =
            derive_seed(config.seed, {seed_tag::kTrain, d, static_cast<std::uint64_t>(phase)});
        summary.mean_loss =
            interp ? train_interpolation_phase(model, adam, schedule, state.dataset, d, summary.epochs,
                                               config.batch_size, phase_seed)
                   : train_extrapolation_phase(model, adam, schedule, state.dataset, d, summary.epochs,
                                               config.batch_size, phase_seed);
        if (aug) {
          summary.augmented = true;
          const std::uint64_t impute_seed = derive_seed(config.seed, {seed_tag::kImpute, d, static_cast<std::uint64_t>(phase)});
          augment(interp ? impute_intermediate(model, schedule, pool, d, impute_seed, config.threads)
                         : impute_final(model, schedule, pool, d, impute_seed, config.threads),
                  summary);
        }
      }
      summary.dataset_after = state.dataset.size();
      info(std::string("phase ") + std::to_string(summary.index) + " " + to_string(phase) + " d=" +
           std::to_string(d) + " loss=" + std::to_string(summary.mean_loss) + " |D|=" +
           std::to_string(summary.dataset_after));
      state.phases.push_back(summary);
    }
  }
  return state;
}

inline nlohmann::ordered_json to_json(const AugmentationEntry& e) {
  return {{"record_id", e.patient_id}, {"phase", to_string(e.phase)}, {"d", e.difficulty}, {"positions", e.positions}};
}

inline std::string phase_csv_header() {
  return "phase_index,phase,d,epochs,trained,augmented,last_epoch_loss,dataset_before,dataset_after,imputed_records\n";
}

inline std::string phase_csv_row(const PhaseSummary& s) {
  char loss[64];
  std::snprintf(loss, sizeof loss, "%.9g", s.mean_loss);
  return std::to_string(s.index) + "," + to_string(s.phase) + "," + std::to_string(s.difficulty) + "," +
         std::to_string(s.epochs) + "," + (s.trained ? "1" : "0") + "," + (s.augmented ? "1" : "0") + "," + loss +
         "," + std::to_string(s.dataset_before) + "," + std::to_string(s.dataset_after) + "," +
         std::to_string(s.imputed_records) + "\n";
}

}  // namespace trajdiff

#endif  // TRAJDIFF_CURRICULUM_HPP
