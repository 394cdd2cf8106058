#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace td = trajdiff;

namespace {

// O(n_pos * n_neg) pairwise count with half credit for ties.
double brute_force_auc(const std::vector<int>& y, const std::vector<double>& s) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

struct Blobs {
  std::vector<td::Vec> x;
  std::vector<int> y;
};

Blobs blobs(std::size_t n, std::size_t k, double separation, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Blobs b;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 3 == 0);
    td::Vec row(k);
    for (double& v : row) v = nd(rng);
    row[0] += label ? separation : -separation;
    b.x.push_back(row);
    b.y.push_back(label);
  }
  return b;
}

}  // namespace

TEST(Classifier, GradientsMatchFiniteDifferences) {
  const auto data = blobs(60, 96, 0.8, 1);
  td::LogisticClassifier model(96, td::FeatureLayout::full);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    for (double& v : model.parameters()[i].data()) v = nd(rng);
  const auto lg = model.loss_and_grads(data.x, data.y, 0.01);
  const auto check = td::testing::finite_difference_check(
      model.parameters(), lg.grads, [&] { return model.loss(data.x, data.y, 0.01); }, 97, 3);
  EXPECT_EQ(check.coordinates, 97u);  // all 96 weights and the bias
  EXPECT_LT(check.max_rel_error, 1e-4) << "worst at " << check.worst;
}

TEST(Classifier, SeparableDataIsFitPerfectly) {
  const auto data = blobs(200, 3, 4.0, 4);
  const auto model = td::train_classifier(data.x, data.y, {});
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.x.size(); ++i) correct += model.predict_label(data.x[i]) == data.y[i];
  EXPECT_EQ(correct, data.x.size());
}

TEST(Classifier, TrainingIsDeterministicAndRejectsSingleClass) {
  const auto data = blobs(100, 5, 0.5, 5);
  const auto a = td::train_classifier(data.x, data.y, {});
  const auto b = td::train_classifier(data.x, data.y, {});
  EXPECT_TRUE(a.parameters() == b.parameters());
  EXPECT_THROW(td::train_classifier(data.x, std::vector<int>(100, 0), {}), td::DataError);
  EXPECT_THROW(a.predict_proba(td::Vec(4, 0.0)), std::invalid_argument);
}

TEST(Classifier, L2ShrinksWeights) {
  const auto data = blobs(300, 4, 1.0, 6);
  td::ClassifierConfig weak, strong;
  strong.l2 = 1.0;
  const auto a = td::train_classifier(data.x, data.y, weak);
  const auto b = td::train_classifier(data.x, data.y, strong);
  double na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    na += a.parameters()[0][j] * a.parameters()[0][j];
    nb += b.parameters()[0][j] * b.parameters()[0][j];
  }
  EXPECT_LT(nb, na);
}

TEST(Metrics, RankAucMatchesPairwiseCount) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> y(1000);
    std::vector<double> s(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
      y[i] = std::bernoulli_distribution(0.4)(rng);
      // Coarse scores on odd trials exercise tie handling.
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) + 0.3 * y[i];
      s[i] = trial % 2 ? std::round(u * 10.0) / 10.0 : u;
    }
    EXPECT_NEAR(*td::auc_rank(y, s), brute_force_auc(y, s), 1e-12);
  }
}

TEST(Metrics, WorkedExample) {
  const std::vector<int> y{1, 0, 1, 0};
  const std::vector<double> s{0.9, 0.8, 0.7, 0.1};
  EXPECT_DOUBLE_EQ(*td::auc_rank(y, s), 0.75);
  const auto m = td::compute_metrics(y, s);
  EXPECT_EQ(m.tp, 2u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.tn, 1u);
  EXPECT_EQ(m.fn, 0u);
  EXPECT_DOUBLE_EQ(m.acc, 0.75);
  EXPECT_DOUBLE_EQ(*m.sen, 1.0);
  EXPECT_DOUBLE_EQ(*m.spe, 0.5);
}

TEST(Metrics, SwappingClassEncodingSwapsSensitivityAndSpecificity) {
  std::mt19937_64 rng(8);
  std::vector<int> y(300), flipped(300);
  std::vector<double> p(300), q(300);
  for (std::size_t i = 0; i < 300; ++i) {
    y[i] = std::bernoulli_distribution(0.3)(rng);
    flipped[i] = 1 - y[i];
    // Dyadic values keep 1 - p exact, so no prediction crosses the threshold.
    p[i] = std::uniform_int_distribution<int>(0, 64)(rng) / 64.0;
    q[i] = 1.0 - p[i];
  }
  for (std::size_t i = 0; i < 300; ++i)
    if (p[i] == 0.5) {  // both encodings would call this one positive
      p[i] = 0.25;
      q[i] = 0.75;
    }
  const auto a = td::compute_metrics(y, p);
  const auto b = td::compute_metrics(flipped, q);
  EXPECT_EQ(*a.sen, *b.spe);
  EXPECT_EQ(*a.spe, *b.sen);
  EXPECT_EQ(a.acc, b.acc);
  EXPECT_NEAR(*a.auc, *b.auc, 1e-15);
}

TEST(Metrics, DegenerateInputs) {
  const std::vector<int> all_pos{1, 1};
  const std::vector<double> s{0.2, 0.7};
  const auto m = td::compute_metrics(all_pos, s);
  EXPECT_FALSE(m.auc.has_value());
  EXPECT_FALSE(m.spe.has_value());
  EXPECT_DOUBLE_EQ(*m.sen, 0.5);
  EXPECT_THROW(td::compute_metrics(std::vector<int>{}, std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(td::compute_metrics(std::vector<int>{1}, std::vector<double>{std::nan("")}), td::NumericError);
  EXPECT_THROW(td::auc_rank(std::vector<int>{1, 0}, std::vector<double>{0.1}), std::invalid_argument);
}

TEST(Metrics, PermutedLabelsGiveChanceAuc) {
  const auto data = blobs(1000, 4, 1.5, 9);
  auto y = data.y;
  std::mt19937_64 rng(10);
  std::shuffle(y.begin(), y.end(), rng);
  std::vector<td::Vec> xtr(data.x.begin(), data.x.begin() + 800), xte(data.x.begin() + 800, data.x.end());
  std::vector<int> ytr(y.begin(), y.begin() + 800), yte(y.begin() + 800, y.end());
  const auto r = td::fit_and_evaluate(xtr, ytr, xte, yte, {}, td::FeatureLayout::baseline_only);
  EXPECT_GE(*r.metrics.auc, 0.4);
  EXPECT_LE(*r.metrics.auc, 0.6);
}

TEST(Standardizer, TrainingMomentsAreZeroAndOne) {
  const auto data = blobs(500, 6, 2.0, 11);
  auto x = data.x;
  for (auto& row : x) row.push_back(3.0);  // constant column
  const auto s = td::Standardizer::fit(x);
  const auto z = s.apply(x);
  for (std::size_t j = 0; j < 7; ++j) {
    double m = 0.0, v = 0.0;
    for (const auto& r : z) m += r[j] / z.size();
    for (const auto& r : z) v += (r[j] - m) * (r[j] - m) / z.size();
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, j == 6 ? 0.0 : 1.0, 1e-12);
  }
  EXPECT_EQ(s.scale[6], 1.0);
  EXPECT_THROW(s.apply(td::Vec(3, 0.0)), std::invalid_argument);
}

TEST(Features, LayoutShapes) {
  const auto c = td::testing::toy_cohort(5, 12);
  const auto& r = c.observed[0];
  EXPECT_EQ(td::featurize(r, nullptr, td::FeatureLayout::baseline_only), *r.latents[0]);
  EXPECT_THROW(td::featurize(r, nullptr, td::FeatureLayout::full), std::invalid_argument);
  td::GeneratedTrajectory g;
  for (std::size_t p = 1; p <= 5; ++p) g.steps.push_back({p, 0, td::Vec(16, double(p)), {}, {}});
  const auto f = td::featurize(r, &g, td::FeatureLayout::full);
  ASSERT_EQ(f.size(), 96u);
  EXPECT_EQ(f[16], 1.0);
  EXPECT_EQ(f[95], 5.0);
  g.steps.pop_back();
  EXPECT_THROW(td::featurize(r, &g, td::FeatureLayout::full), std::invalid_argument);
}

TEST(Metrics, CsvRow) {
  td::MetricsReport m;
  m.tp = 1;
  m.tn = 2;
  m.fp = 1;
  m.acc = 0.75;
  m.sen = 1.0;
  m.spe = 2.0 / 3.0;
  EXPECT_EQ(td::metrics_csv_header(), "run_id,mode,acc,sen,spe,auc,n,seed");
  EXPECT_EQ(td::metrics_csv_row("r1", "full", m, 7), "r1,full,0.75,1,0.66666666666666663,NA,4,7");
}
