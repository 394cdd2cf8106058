#include <gtest/gtest.h>

#include <map>
#include <set>

#include "support.hpp"

namespace td = trajdiff;
using td::kGridLength;

namespace {

td::CurriculumConfig quick_config(std::uint64_t seed) {
  td::CurriculumConfig cfg;
  cfg.epochs = {1};
  cfg.batch_size = 64;
  cfg.seed = seed;
  return cfg;
}

struct Fixture {
  td::Cohort cohort;
  td::NoiseSchedule schedule = td::build_schedule(10, 1e-4, 0.3);
};

const Fixture& shared() {
  static const Fixture f = [] {
    Fixture x;
    x.cohort = td::testing::toy_cohort(1000, 31);
    return x;
  }();
  return f;
}

}  // namespace

TEST(Curriculum, CompletesEveryMatchingRecordAndPreservesObservations) {
  const auto& f = shared();
  const auto& pool = f.cohort.observed;
  std::map<std::pair<td::Stratum, std::size_t>, std::size_t> patterns;
  for (const auto& r : pool) {
    const auto m = td::classify_missingness(r);
    ++patterns[{m.stratum, m.count}];
  }
  for (std::size_t d = 1; d <= 4; ++d) {
    ASSERT_GT((patterns[{td::Stratum::intermediate, d}]), 0u) << "d=" << d;
    ASSERT_GT((patterns[{td::Stratum::final_suffix, d}]), 0u) << "d=" << d;
  }

  td::MlpDenoiser model({16, 16}, 1);
  td::testing::LogCapture quiet;
  const auto state = td::run_curriculum(model, f.schedule, pool, quick_config(1));

  ASSERT_EQ(state.phases.size(), 8u);
  std::size_t previous = 0;
  for (const auto& p : state.phases) {
    EXPECT_GE(p.dataset_after, p.dataset_before);
    EXPECT_GE(p.dataset_before, previous);
    previous = p.dataset_after;
    EXPECT_TRUE(p.trained);
    EXPECT_TRUE(p.augmented);
  }
  EXPECT_EQ(state.dataset.size(), pool.size());

  std::map<std::string, const td::TrajectoryRecord*> by_id;
  for (const auto& r : pool) by_id[r.patient_id] = &r;
  for (const auto& r : state.dataset) {
    ASSERT_TRUE(r.complete()) << r.patient_id;
    const auto& orig = *by_id.at(r.patient_id);
    EXPECT_EQ(r.label, orig.label);
    for (std::size_t pos = 0; pos < kGridLength; ++pos) {
      if (orig.present(pos)) {
        EXPECT_EQ(*r.latents[pos], *orig.latents[pos]);  // bitwise on doubles
        EXPECT_EQ(r.flags[pos], td::Provenance::observed);
      } else {
        EXPECT_EQ(r.flags[pos], td::Provenance::imputed);
        for (double v : *r.latents[pos]) EXPECT_TRUE(std::isfinite(v));
      }
    }
  }
  // Log entries name exactly the positions that were absent.
  EXPECT_EQ(state.augmentation_log.size(), pool.size() - (patterns[{td::Stratum::complete, 0}]));
  for (const auto& e : state.augmentation_log) EXPECT_EQ(e.positions, by_id.at(e.patient_id)->absent_positions());
}

TEST(Curriculum, PhaseOrderAlternatesTasks) {
  const auto& f = shared();
  td::MlpDenoiser model({16, 8}, 2);
  auto cfg = quick_config(2);
  cfg.max_difficulty = 5;
  td::testing::LogCapture quiet;
  const auto state = td::run_curriculum(model, f.schedule, f.cohort.observed, cfg);
  ASSERT_EQ(state.phases.size(), 10u);
  for (std::size_t k = 0; k < 10; ++k) {
    EXPECT_EQ(state.phases[k].index, k);
    EXPECT_EQ(state.phases[k].difficulty, k / 2 + 1);
    EXPECT_EQ(state.phases[k].phase, k % 2 == 0 ? td::Phase::interpolation : td::Phase::extrapolation);
  }
  // Only four intermediate slots exist, so d = 5 interpolation is skipped.
  EXPECT_FALSE(state.phases[8].trained);
  EXPECT_TRUE(state.phases[9].trained);
}

TEST(Curriculum, DisabledAugmentationKeepsCompleteSet) {
  const auto& f = shared();
  td::MlpDenoiser model({16, 8}, 3);
  auto cfg = quick_config(3);
  cfg.interpolation_aug = false;
  cfg.extrapolation_aug = false;
  td::testing::LogCapture quiet;
  const auto state = td::run_curriculum(model, f.schedule, f.cohort.observed, cfg);
  EXPECT_EQ(state.dataset.size(), td::select_complete(f.cohort.observed).size());
  EXPECT_TRUE(state.augmentation_log.empty());
}

TEST(Curriculum, DisabledTaskSkipsItsPhases) {
  const auto& f = shared();
  td::MlpDenoiser model({16, 8}, 4);
  auto cfg = quick_config(4);
  cfg.interpolation_task = false;
  td::testing::LogCapture quiet;
  const auto state = td::run_curriculum(model, f.schedule, f.cohort.observed, cfg);
  ASSERT_EQ(state.phases.size(), 4u);
  for (const auto& p : state.phases) EXPECT_EQ(p.phase, td::Phase::extrapolation);
  for (const auto& r : state.dataset) {
    const auto m = td::classify_missingness(*std::find_if(
        f.cohort.observed.begin(), f.cohort.observed.end(),
        [&](const td::TrajectoryRecord& o) { return o.patient_id == r.patient_id; }));
    EXPECT_NE(m.stratum, td::Stratum::intermediate);
  }
}

TEST(Curriculum, DeterministicAndThreadIndependent) {
  const auto& f = shared();
  auto run = [&](std::size_t threads) {
    td::MlpDenoiser model({16, 8}, 5);
    auto cfg = quick_config(5);
    cfg.threads = threads;
    td::testing::LogCapture quiet;
    auto state = td::run_curriculum(model, f.schedule, f.cohort.observed, cfg);
    return std::pair{std::move(model), std::move(state)};
  };
  const auto [m1, s1] = run(1);
  const auto [m2, s2] = run(1);
  const auto [m4, s4] = run(4);
  EXPECT_TRUE(m1.parameters() == m2.parameters());
  EXPECT_TRUE(m1.parameters() == m4.parameters());
  EXPECT_EQ(s1.dataset, s2.dataset);
  EXPECT_EQ(s1.dataset, s4.dataset);
}

TEST(Curriculum, TrainingReducesLoss) {
  const auto& f = shared();
  const auto complete = td::select_complete(f.cohort.observed);
  td::MlpDenoiser model({16, 32}, 6);
  td::Rng rng(6);
  std::vector<td::DenoisingSample> probe;
  for (std::size_t i = 0; i < 200; ++i)
    probe.push_back(td::draw_extrapolation_sample(complete[i], 2, f.schedule.steps(), 16, rng));
  const double before = model.loss(f.schedule, probe);
  td::Adam adam(model.parameters(), {3e-3});
  td::train_extrapolation_phase(model, adam, f.schedule, complete, 2, 15, 64, 99);
  EXPECT_LT(model.loss(f.schedule, probe), 0.8 * before);
}

TEST(Curriculum, InterpolationMasksAreUniformSubsets) {
  td::Rng rng(8);
  for (std::size_t d = 1; d <= 4; ++d) {
    std::map<std::array<bool, kGridLength>, std::size_t> freq;
    const std::size_t n = 24000;
    for (std::size_t k = 0; k < n; ++k) {
      const auto m = td::draw_interpolation_mask(d, rng);
      EXPECT_FALSE(m[0]);
      EXPECT_FALSE(m[5]);
      ++freq[m];
    }
    const std::size_t subsets = d == 1 || d == 3 ? 4 : (d == 2 ? 6 : 1);
    ASSERT_EQ(freq.size(), subsets);
    const double p = 1.0 / static_cast<double>(subsets);
    for (const auto& [mask, hits] : freq) {
      const double se = std::sqrt(p * (1 - p) / n);
      EXPECT_NEAR(static_cast<double>(hits) / n, p, 4 * se + 1e-12);
    }
  }
  EXPECT_THROW(td::draw_interpolation_mask(5, rng), std::out_of_range);
}

TEST(Curriculum, ExtrapolationTargetsFollowHorizon) {
  const auto& r = shared().cohort.ground_truth[0];
  td::Rng rng(9);
  for (std::size_t d = 1; d <= 5; ++d) {
    std::set<std::size_t> targets;
    for (int k = 0; k < 400; ++k) {
      const auto s = td::draw_extrapolation_sample(r, d, 10, 16, rng);
      targets.insert(s.condition.target);
      for (std::size_t pos = 0; pos < kGridLength; ++pos) EXPECT_EQ(s.condition.masked[pos], pos >= s.condition.target);
    }
    EXPECT_EQ(targets.size(), d);
    EXPECT_EQ(*targets.begin(), kGridLength - d);
  }
}

TEST(Curriculum, EmptyCompleteSetWarns) {
  auto pool = shared().cohort.observed;
  pool.erase(std::remove_if(pool.begin(), pool.end(), [](const td::TrajectoryRecord& r) { return r.complete(); }),
             pool.end());
  td::testing::LogCapture capture;
  EXPECT_TRUE(td::select_complete(pool).empty());
  EXPECT_EQ(capture.warnings, 1u);
}

TEST(Curriculum, ConfigValidation) {
  td::CurriculumConfig cfg;
  cfg.max_difficulty = 0;
  EXPECT_THROW(td::validate(cfg), td::ConfigError);
  cfg.max_difficulty = 6;
  EXPECT_THROW(td::validate(cfg), td::ConfigError);
  cfg = {};
  cfg.epochs.clear();
  EXPECT_THROW(td::validate(cfg), td::ConfigError);
  cfg = {};
  EXPECT_EQ(cfg.epochs_at(1), 20u);
  EXPECT_EQ(cfg.epochs_at(9), 10u);
}

TEST(Curriculum, PhaseCsvFormatting) {
  td::PhaseSummary s;
  s.index = 3;
  s.phase = td::Phase::extrapolation;
  s.difficulty = 2;
  s.epochs = 16;
  s.trained = true;
  s.mean_loss = 0.125;
  s.dataset_before = 10;
  s.dataset_after = 12;
  s.imputed_records = 2;
  EXPECT_EQ(td::phase_csv_row(s), "3,extrapolation,2,16,1,0,0.125,10,12,2\n");
  EXPECT_EQ(td::to_json(td::AugmentationEntry{"P1", td::Phase::interpolation, 2, {1, 3}}).dump(),
            R"({"record_id":"P1","phase":"interpolation","d":2,"positions":[1,3]})");
}
