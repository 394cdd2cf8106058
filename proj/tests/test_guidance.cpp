#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

namespace td = trajdiff;
using td::kGridLength;
using td::Vec;

namespace {

// Picks the candidate with the smallest first coordinate.
class FirstCoordinateEvaluator final : public td::CandidateEvaluator {
 public:
  Vec score(std::size_t, const td::TrajectoryRecord&, std::span<const Vec> candidates) const override {
    Vec s;
    for (const Vec& z : candidates) s.push_back(-z[0]);
    return s;
  }
};

class ConstantEvaluator final : public td::CandidateEvaluator {
 public:
  Vec score(std::size_t, const td::TrajectoryRecord&, std::span<const Vec> candidates) const override {
    return Vec(candidates.size(), -1.0);
  }
};

struct SamplerFixture {
  td::NoiseSchedule schedule = td::build_schedule(12, 1e-4, 0.3);
  td::MlpDenoiser model{td::DenoiserConfig{16, 24}, 3};
  td::Cohort cohort = td::testing::toy_cohort(12, 8);
};

}  // namespace

// Uniform draws inside the fitted bounds come back within half a bin, with the
// RMS error of a uniform quantizer.
TEST(Quantizer, ErrorBoundAndRms) {
  const auto c = td::testing::toy_cohort(300, 1);
  std::vector<Vec> lat;
  for (const auto& r : c.ground_truth)
    for (const auto& z : r.latents) lat.push_back(*z);
  const auto q = td::fit_quantizer(lat, 64);
  ASSERT_EQ(q.dim(), 16u);
  std::mt19937_64 rng(10);
  const std::size_t n = 100000;
  Vec sq(q.dim(), 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    Vec z(q.dim());
    for (std::size_t j = 0; j < q.dim(); ++j)
      z[j] = std::uniform_real_distribution<double>(q.lower[j], q.upper[j])(rng);
    const Vec back = td::dequantize(td::quantize(z, q), q);
    for (std::size_t j = 0; j < q.dim(); ++j) {
      const double err = back[j] - z[j];
      ASSERT_LE(std::abs(err), 0.5 * q.width(j) * (1 + 1e-12)) << "dim " << j;
      sq[j] += err * err;
    }
  }
  for (std::size_t j = 0; j < q.dim(); ++j) {
    const double rms = std::sqrt(sq[j] / n), expect = q.width(j) / std::sqrt(12.0);
    EXPECT_NEAR(rms, expect, 0.05 * expect) << "dim " << j;
  }
}

TEST(Quantizer, BoundsArePercentiles) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  std::vector<Vec> lat(2000, Vec(3));
  for (auto& z : lat)
    for (double& v : z) v = nd(rng);
  const auto q = td::fit_quantizer(lat, 32);
  for (std::size_t j = 0; j < 3; ++j) {
    Vec col;
    for (const auto& z : lat) col.push_back(z[j]);
    EXPECT_DOUBLE_EQ(q.lower[j], td::percentile(col, 0.5));
    EXPECT_DOUBLE_EQ(q.upper[j], td::percentile(col, 99.5));
  }
  EXPECT_TRUE(q.widened_dims.empty());
  EXPECT_EQ(q.vocab_size(), 96u);
}

TEST(Quantizer, TokenLayoutAndClamping) {
  td::QuantizerSpec q;
  q.lower = {0.0, -1.0};
  q.upper = {1.0, 1.0};
  q.bins = 4;
  const auto t = td::quantize(Vec{0.3, 0.99}, q);
  EXPECT_EQ(t.ids, (std::vector<std::size_t>{1, 4 + 3}));
  EXPECT_EQ(td::quantize(Vec{-5.0, 5.0}, q).ids, (std::vector<std::size_t>{0, 7}));
  EXPECT_EQ(td::quantize(Vec{1.0, -1.0}, q).ids, (std::vector<std::size_t>{3, 4}));
  EXPECT_EQ(td::quantize(Vec{std::nan(""), 0.0}, q).ids[0], 0u);
  EXPECT_EQ(td::dequantize(t, q), (Vec{0.375, 0.75}));
  EXPECT_THROW(td::dequantize(td::TokenSequence{{1, 2}}, q), std::out_of_range);
  EXPECT_THROW(td::dequantize(td::TokenSequence{{1, 8}}, q), std::out_of_range);
  EXPECT_THROW(td::quantize(Vec{0.0}, q), std::invalid_argument);
  const auto back = td::QuantizerSpec::from_json(nlohmann::json::parse(q.to_json().dump()));
  EXPECT_EQ(back.lower, q.lower);
  EXPECT_EQ(back.upper, q.upper);
  EXPECT_EQ(back.bins, q.bins);
}

TEST(Quantizer, DegenerateDimensionIsWidenedWithWarning) {
  std::vector<Vec> lat(50, Vec{2.0, 0.0});
  for (std::size_t i = 0; i < lat.size(); ++i) lat[i][1] = static_cast<double>(i);
  td::testing::LogCapture capture;
  const auto q = td::fit_quantizer(lat, 8);
  EXPECT_EQ(capture.warnings, 1u);
  ASSERT_EQ(q.widened_dims, (std::vector<std::size_t>{0}));
  EXPECT_LT(q.lower[0], 2.0);
  EXPECT_GT(q.upper[0], 2.0);
  EXPECT_TRUE(std::isfinite(q.width(0)));
  EXPECT_NEAR(td::dequantize(td::quantize(Vec{2.0, 3.0}, q), q)[0], 2.0, 1e-12);
}

TEST(Scorer, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  td::TokenScorer scorer(16, 16 * 64, 32, 8, 5);
  std::vector<td::TokenSequence> toks;
  std::vector<Vec> ys;
  std::uniform_int_distribution<std::size_t> bin(0, 63);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 20; ++i) {
    td::TokenSequence t;
    for (std::size_t j = 0; j < 16; ++j) t.ids.push_back(j * 64 + bin(rng));
    toks.push_back(t);
    Vec y(8);
    for (double& v : y) v = nd(rng);
    ys.push_back(y);
  }
  // Restrict the draw to embedding rows the batch touches, plus the head.
  const auto lg = scorer.loss_and_grads(toks, ys);
  td::ParameterSet view;
  std::vector<td::Tensor> grads;
  std::vector<std::size_t> used_rows;
  for (const auto& t : toks) used_rows.insert(used_rows.end(), t.ids.begin(), t.ids.end());
  std::sort(used_rows.begin(), used_rows.end());
  used_rows.erase(std::unique(used_rows.begin(), used_rows.end()), used_rows.end());
  auto check = td::testing::finite_difference_check(
      scorer.parameters(), lg.grads, [&] { return scorer.loss(toks, ys); }, 100, 23);
  EXPECT_EQ(check.coordinates, 100u);
  EXPECT_LT(check.max_rel_error, 1e-4) << "worst at " << check.worst;

  // A second pass concentrated on touched embedding entries.
  std::mt19937_64 pick(4);
  double worst = 0.0;
  auto& emb = scorer.parameters()[0];
  for (int k = 0; k < 100; ++k) {
    const std::size_t row = used_rows[std::uniform_int_distribution<std::size_t>(0, used_rows.size() - 1)(pick)];
    const std::size_t idx = row * emb.cols() + std::uniform_int_distribution<std::size_t>(0, emb.cols() - 1)(pick);
    const double saved = emb[idx], h = 1e-5;
    emb[idx] = saved + h;
    const double up = scorer.loss(toks, ys);
    emb[idx] = saved - h;
    const double down = scorer.loss(toks, ys);
    emb[idx] = saved;
    const double num = (up - down) / (2 * h), a = lg.grads[0][idx];
    worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6}));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Scorer, PredictMatchesTracedForward) {
  td::TokenScorer scorer(4, 4 * 8, 6, 3, 9);
  const td::TokenSequence t{{1, 9, 18, 31}};
  const Vec y = scorer.predict(t);
  const std::vector<td::TokenSequence> toks{t};
  const std::vector<Vec> zero{Vec(3, 0.0)};
  double ss = 0.0;
  for (double v : y) ss += v * v;
  EXPECT_NEAR(scorer.loss(toks, zero), ss / 3.0, 1e-14);
  const auto back = td::TokenScorer::from_json(nlohmann::json::parse(scorer.to_json().dump()));
  EXPECT_EQ(back.predict(t), y);
  EXPECT_THROW(scorer.predict(td::TokenSequence{{1000}}), std::out_of_range);
}

TEST(Scorer, LearnsLinearReadout) {
  const auto c = td::testing::toy_cohort(400, 2);
  std::vector<Vec> lat, bio;
  for (const auto& r : c.observed)
    for (std::size_t p = 0; p < kGridLength; ++p)
      if (r.present(p)) {
        lat.push_back(*r.latents[p]);
        bio.push_back(*r.biomarkers[p]);
      }
  const auto q = td::fit_quantizer(lat, 64);
  std::vector<td::TokenSequence> toks;
  for (const auto& z : lat) toks.push_back(td::quantize(z, q));
  td::ScorerConfig cfg;
  cfg.seed = 4;
  const auto trained = td::train_scorer(toks, bio, q.vocab_size(), cfg);
  ASSERT_EQ(trained.holdout_r2.size(), 8u);
  double mean_r2 = 0.0;
  for (double r : trained.holdout_r2) mean_r2 += r / 8.0;
  EXPECT_GT(mean_r2, 0.5);
  // Deterministic given the seed.
  const auto again = td::train_scorer(toks, bio, q.vocab_size(), cfg);
  EXPECT_TRUE(again.scorer.parameters() == trained.scorer.parameters());
}

TEST(Scorer, RSquaredOracle) {
  const std::vector<Vec> truth{{1, 2}, {2, 4}, {3, 9}};
  EXPECT_EQ(td::r_squared(truth, truth), (Vec{1.0, 1.0}));
  const std::vector<Vec> mean_pred(3, Vec{2.0, 5.0});
  const Vec r2 = td::r_squared(truth, mean_pred);
  EXPECT_NEAR(r2[0], 0.0, 1e-15);
  EXPECT_NEAR(r2[1], 0.0, 1e-15);
}

TEST(Expectation, RecoversExactAffineMap) {
  std::array<std::vector<Vec>, kGridLength> xs, ys;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (std::size_t pos = 1; pos < kGridLength; ++pos)
    for (int i = 0; i < 40; ++i) {
      const Vec x{nd(rng), nd(rng)};
      xs[pos].push_back(x);
      ys[pos].push_back({pos * x[0] - x[1] + 0.5, 2.0 * x[1] - 3.0});
    }
  const auto m = td::AffineExpectation::fit(xs, ys, 2, 2);
  for (std::size_t pos = 1; pos < kGridLength; ++pos) {
    const Vec mu = m.mean(pos, Vec{1.0, 2.0});
    EXPECT_NEAR(mu[0], pos * 1.0 - 2.0 + 0.5, 1e-10);
    EXPECT_NEAR(mu[1], 1.0, 1e-10);
    for (double s : m.sigma(pos)) EXPECT_EQ(s, td::AffineExpectation::kSigmaFloor);
    EXPECT_FALSE(m.at(pos).fallback);
  }
  const auto back = td::AffineExpectation::from_json(nlohmann::json::parse(m.to_json().dump()));
  EXPECT_EQ(back.mean(3, Vec{0.2, -0.4}), m.mean(3, Vec{0.2, -0.4}));
  EXPECT_EQ(back.sigma(3), m.sigma(3));
  EXPECT_THROW(m.mean(0, Vec{1.0, 2.0}), std::out_of_range);
  EXPECT_THROW(m.mean(1, Vec{1.0}), std::invalid_argument);
}

TEST(Expectation, FallsBackToMeanWithFewPairs) {
  std::array<std::vector<Vec>, kGridLength> xs, ys;
  for (std::size_t pos = 1; pos < kGridLength; ++pos) {
    xs[pos] = {{0.0, 0.0}, {1.0, 1.0}};
    ys[pos] = {{1.0}, {3.0}};
  }
  td::testing::LogCapture capture;
  const auto m = td::AffineExpectation::fit(xs, ys, 2, 1);
  EXPECT_EQ(capture.warnings, 5u);
  EXPECT_TRUE(m.at(1).fallback);
  EXPECT_DOUBLE_EQ(m.mean(1, Vec{9.0, 9.0})[0], 2.0);
  EXPECT_DOUBLE_EQ(m.sigma(1)[0], 1.0);
}

TEST(Expectation, ShuffledPairsGivePopulationMean) {
  const auto c = td::testing::toy_cohort(3000, 6);
  auto records = c.ground_truth;
  std::mt19937_64 rng(7);
  std::vector<Vec> baselines;
  for (const auto& r : records) baselines.push_back(*r.biomarkers[0]);
  std::shuffle(baselines.begin(), baselines.end(), rng);
  for (std::size_t i = 0; i < records.size(); ++i) records[i].biomarkers[0] = baselines[i];
  const auto m = td::fit_expected_model(records);
  for (std::size_t pos = 1; pos < kGridLength; ++pos) {
    Vec mean(8, 0.0), sd(8, 0.0);
    for (const auto& r : records)
      for (std::size_t k = 0; k < 8; ++k) mean[k] += (*r.biomarkers[pos])[k] / records.size();
    for (const auto& r : records)
      for (std::size_t k = 0; k < 8; ++k) sd[k] += std::pow((*r.biomarkers[pos])[k] - mean[k], 2) / records.size();
    const Vec mu = m.mean(pos, baselines[0]);
    for (std::size_t k = 0; k < 8; ++k) {
      const double s = std::sqrt(sd[k]);
      EXPECT_NEAR(mu[k], mean[k], 0.15 * s);
      EXPECT_NEAR(m.sigma(pos)[k], s, 0.03 * s);
    }
  }
}

// One class, isotropic baseline, noiseless readout: the regression slope in
// biomarker space is W A^tau W^+ = 0.97^tau I.
TEST(Expectation, RecoversGeneratorComposition) {
  auto cfg = td::default_cohort_config(9);
  cfg.n_patients = 4000;
  cfg.pmci_prior = 0.0;
  cfg.observation_noise = 0.0;
  const auto c = td::generate_cohort(cfg);
  const auto m = td::fit_expected_model(c.ground_truth);
  for (std::size_t pos = 1; pos < kGridLength; ++pos) {
    const double a = std::pow(0.97, static_cast<double>(pos));
    const auto& coef = m.at(pos).coef;
    for (std::size_t j = 0; j < 8; ++j)
      for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(coef.at(j, k), j == k ? a : 0.0, 0.03) << pos;
  }
}

TEST(Plausibility, ScoreAndSelection) {
  EXPECT_DOUBLE_EQ(td::plausibility_score(Vec{1.0, 2.0}, Vec{0.0, 0.0}, Vec{1.0, 2.0}), -2.0);
  EXPECT_DOUBLE_EQ(td::plausibility_score(Vec{3.0}, Vec{3.0}, Vec{0.5}), 0.0);
  EXPECT_THROW(td::plausibility_score(Vec{1.0}, Vec{0.0}, Vec{0.0}), std::invalid_argument);
  EXPECT_EQ(td::select_best(Vec{-3.0, -1.0, -1.0, -2.0}), 1u);
  EXPECT_EQ(td::select_best(Vec{-1.0}), 0u);
  EXPECT_THROW(td::select_best(Vec{}), std::invalid_argument);
}

TEST(GuidedSampling, SelectsArgmaxAndRecordsSeeds) {
  SamplerFixture f;
  const td::ReverseSampler<td::MlpDenoiser> sampler(f.model, f.schedule);
  const FirstCoordinateEvaluator ev;
  const auto& base = f.cohort.observed[0];
  const auto traj = td::guided_autoregressive_sample(sampler, ev, base, 6, 42);
  ASSERT_EQ(traj.steps.size(), 5u);
  std::vector<td::GenerationStep> history;
  for (const auto& step : traj.steps) {
    ASSERT_EQ(step.seeds.size(), 6u);
    ASSERT_EQ(step.scores.size(), 6u);
    const auto cond =
        td::build_condition(td::history_record(base, history), step.position, td::TaskMode::extrapolation);
    double best = -1e300;
    for (std::size_t n = 0; n < 6; ++n) {
      EXPECT_EQ(step.seeds[n], td::candidate_seed(42, base.patient_id, step.position, n));
      const Vec z = sampler.sample(cond, step.seeds[n]);
      EXPECT_EQ(step.scores[n], -z[0]);
      best = std::max(best, -z[0]);
    }
    EXPECT_EQ(-step.latent[0], best);
    EXPECT_EQ(step.selected, td::select_best(step.scores));
    history.push_back(step);
  }
  EXPECT_TRUE(td::replay_matches(sampler, base, traj));
  auto tampered = traj;
  tampered.steps[2].latent[0] += 1e-9;
  EXPECT_FALSE(td::replay_matches(sampler, base, tampered));
}

TEST(GuidedSampling, TiesGoToFirstCandidateAndSingleCandidateIsScored) {
  SamplerFixture f;
  const td::ReverseSampler<td::MlpDenoiser> sampler(f.model, f.schedule);
  const auto& base = f.cohort.observed[1];
  const auto tied = td::guided_autoregressive_sample(sampler, ConstantEvaluator{}, base, 4, 1);
  for (const auto& s : tied.steps) EXPECT_EQ(s.selected, 0u);
  const auto single = td::guided_autoregressive_sample(sampler, FirstCoordinateEvaluator{}, base, 1, 1);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(single.steps[k].scores.size(), 1u);
    EXPECT_EQ(single.steps[k].latent, tied.steps[k].latent);  // candidate 0 in both runs
  }
}

TEST(GuidedSampling, UsesOnlyBaselineOfInputRecord) {
  SamplerFixture f;
  const td::ReverseSampler<td::MlpDenoiser> sampler(f.model, f.schedule);
  auto base = f.cohort.ground_truth[2];
  const auto a = td::guided_autoregressive_sample(sampler, FirstCoordinateEvaluator{}, base, 3, 5);
  for (std::size_t p = 1; p < kGridLength; ++p) (*base.latents[p])[0] += 100.0;
  const auto b = td::guided_autoregressive_sample(sampler, FirstCoordinateEvaluator{}, base, 3, 5);
  EXPECT_EQ(a, b);
}

TEST(GuidedSampling, ThreadCountDoesNotChangeResults) {
  SamplerFixture f;
  const td::ReverseSampler<td::MlpDenoiser> sampler(f.model, f.schedule);
  const FirstCoordinateEvaluator ev;
  const auto one = td::generate_trajectories(sampler, ev, f.cohort.observed, 3, 11, 1);
  const auto four = td::generate_trajectories(sampler, ev, f.cohort.observed, 3, 11, 4);
  EXPECT_EQ(one, four);
  EXPECT_NE(one, td::generate_trajectories(sampler, ev, f.cohort.observed, 3, 12, 1));
}

TEST(GuidedSampling, BiomarkerEvaluatorMatchesManualPipeline) {
  const auto c = td::testing::toy_cohort(200, 14);
  std::vector<Vec> lat;
  for (const auto& r : c.observed)
    for (std::size_t p = 0; p < kGridLength; ++p)
      if (r.present(p)) lat.push_back(*r.latents[p]);
  const auto q = td::fit_quantizer(lat, 16);
  const td::TokenScorer scorer(16, q.vocab_size(), 8, 8, 2);
  const auto expected = td::fit_expected_model(c.observed);
  const td::BiomarkerEvaluator ev(q, scorer, expected);
  const std::vector<Vec> cands{lat[3], lat[7]};
  const auto& base = c.observed[0];
  const Vec scores = ev.score(2, base, cands);
  for (std::size_t n = 0; n < 2; ++n)
    EXPECT_EQ(scores[n], td::plausibility_score(scorer.predict(td::quantize(cands[n], q)),
                                                expected.mean(2, *base.biomarkers[0]), expected.sigma(2)));
  const auto lexp = td::fit_latent_expectation(c.observed);
  const td::RawLatentEvaluator raw(lexp);
  EXPECT_EQ(raw.score(4, base, cands)[1],
            td::plausibility_score(cands[1], lexp.mean(4, *base.latents[0]), lexp.sigma(4)));
}

TEST(Trajectories, MseOracle) {
  td::TrajectoryRecord truth;
  td::GeneratedTrajectory g;
  for (std::size_t p = 0; p < kGridLength; ++p) truth.latents[p] = Vec{double(p), 0.0};
  for (std::size_t p = 1; p < kGridLength; ++p) g.steps.push_back({p, 0, Vec{double(p) + 1.0, 2.0}, {}, {}});
  EXPECT_DOUBLE_EQ(td::trajectory_mse(g, truth), 2.5);
}

TEST(Trajectories, FileRoundTripAndErrors) {
  SamplerFixture f;
  const td::ReverseSampler<td::MlpDenoiser> sampler(f.model, f.schedule);
  td::TrajectoryFile file;
  file.header = td::ArtifactHeader{"samples", td::kSchemaVersion, "00000000deadbeef"};
  file.candidates = 3;
  file.run_seed = 0xfedcba9876543210ULL;
  file.trajectories = td::generate_trajectories(sampler, FirstCoordinateEvaluator{}, f.cohort.observed, 3, 2);
  const auto path = td::testing::scratch_dir("traj") / "t.jsonl";
  td::write_trajectories(file, path);
  const auto back = td::read_trajectories(path);
  EXPECT_EQ(back.trajectories, file.trajectories);
  EXPECT_EQ(back.candidates, 3u);
  EXPECT_EQ(back.run_seed, file.run_seed);
  EXPECT_EQ(back.header->config_hash, "00000000deadbeef");
  for (std::size_t i = 0; i < back.trajectories.size(); ++i)
    EXPECT_TRUE(td::replay_matches(sampler, f.cohort.observed[i], back.trajectories[i]));

  auto j = td::to_json(file.trajectories[0]);
  j["steps"][1]["position"] = 4;
  EXPECT_THROW(td::trajectory_from_json(j), td::DataError);
  j = td::to_json(file.trajectories[0]);
  j["steps"].erase(0);
  EXPECT_THROW(td::trajectory_from_json(j), td::DataError);
  std::string text = td::serialize_trajectories(file);
  text += "{\"patient_id\": 3}\n";
  try {
    td::parse_trajectories(text);
    FAIL() << "expected DataError";
  } catch (const td::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line " + std::to_string(file.trajectories.size() + 2)), std::string::npos);
  }
}
