#ifndef TRAJDIFF_CLASSIFY_HPP
#define TRAJDIFF_CLASSIFY_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajdiff/cohort.hpp"
#include "trajdiff/errors.hpp"
#include "trajdiff/guidance.hpp"
#include "trajdiff/optim.hpp"
#include "trajdiff/tape.hpp"

namespace trajdiff {

enum class FeatureLayout { baseline_only, full };

inline const char* to_string(FeatureLayout l) { return l == FeatureLayout::full ? "full" : "baseline-only"; }

// [Z0] or [Z0, Z1_hat .. Z5_hat], unstandardized.
inline Vec featurize(const TrajectoryRecord& record, const GeneratedTrajectory* generated, FeatureLayout layout) {
  if (!record.present(0)) throw std::invalid_argument("featurize: baseline latent missing for " + record.patient_id);
  Vec f = *record.latents[0];
  if (layout == FeatureLayout::baseline_only) return f;
  if (!generated) throw std::invalid_argument("featurize: full layout needs a generated trajectory");
  if (generated->steps.size() != kLastPosition)
    throw std::invalid_argument("featurize: generated trajectory for " + record.patient_id + " is incomplete");
  const std::size_t d = f.size();
  for (const auto& step : generated->steps) {
    if (step.latent.size() != d)
      throw std::invalid_argument("featurize: generated latent has the wrong dimension");
    f.insert(f.end(), step.latent.begin(), step.latent.end());
  }
  return f;
}

// Per-column affine standardization fitted on the training split.
struct Standardizer {
  Vec mean;
  Vec scale;

  static Standardizer fit(const std::vector<Vec>& rows) {
    if (rows.empty()) throw std::invalid_argument("Standardizer: no rows");
    const std::size_t k = rows.front().size();
    const double n = static_cast<double>(rows.size());
    Standardizer s;
    s.mean.assign(k, 0.0);
    s.scale.assign(k, 0.0);
    for (const Vec& r : rows)
      for (std::size_t j = 0; j < k; ++j) s.mean[j] += r[j];
    for (double& m : s.mean) m /= n;
    for (const Vec& r : rows)
      for (std::size_t j = 0; j < k; ++j) s.scale[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
    for (double& v : s.scale) {
      v = std::sqrt(v / n);
      if (!(v > 0.0)) v = 1.0;  // constant column: center only
    }
    return s;
  }

  Vec apply(std::span<const double> x) const {
    if (x.size() != mean.size()) throw std::invalid_argument("Standardizer: dimension mismatch");
    Vec out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / scale[j];
    return out;
  }
  std::vector<Vec> apply(const std::vector<Vec>& rows) const {
    std::vector<Vec> out;
    out.reserve(rows.size());
    for (const Vec& r : rows) out.push_back(apply(r));
    return out;
  }
};

struct ClassifierConfig {
  double l2 = 1e-3;
  std::size_t iterations = 400;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
};

inline double logistic(double z) { return kernel::sigmoid(z); }

class LogisticClassifier {
 public:
  LogisticClassifier() = default;
  explicit LogisticClassifier(std::size_t features, FeatureLayout layout = FeatureLayout::baseline_only)
      : layout_(layout) {
    params_.add("w", Tensor::matrix(features, 1));
    params_.add("b", Tensor::matrix(1, 1));
  }

  FeatureLayout layout() const noexcept { return layout_; }
  std::size_t features() const { return params_[0].rows(); }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  double logit(std::span<const double> x) const {
    if (x.size() != features()) throw std::invalid_argument("classifier: feature dimension mismatch");
    double z = params_[1][0];
    for (std::size_t j = 0; j < x.size(); ++j) z += params_[0][j] * x[j];
    return z;
  }
  double predict_proba(std::span<const double> x) const { return logistic(logit(x)); }
  int predict_label(std::span<const double> x) const { return predict_proba(x) >= 0.5 ? 1 : 0; }

  // Mean cross-entropy + (l2 / 2) ||w||^2.
  LossAndGrads loss_and_grads(const std::vector<Vec>& x, const std::vector<int>& y, double l2) const {
    ad::Tape tape;
    auto p = params_.bind(tape);
    ad::Var loss = traced_loss(tape, p, x, y, l2);
    tape.backward(loss);
    return {loss.value()[0], {tape.grad(p[0]), tape.grad(p[1])}};
  }
  double loss(const std::vector<Vec>& x, const std::vector<int>& y, double l2) const {
    ad::Tape tape;
    auto p = params_.bind(tape);
    return traced_loss(tape, p, x, y, l2).value()[0];
  }

 private:
  ad::Var traced_loss(ad::Tape& tape, const std::vector<ad::Var>& p, const std::vector<Vec>& x,
                      const std::vector<int>& y, double l2) const {
    if (x.empty() || x.size() != y.size()) throw std::invalid_argument("classifier loss: bad batch");
    const std::size_t n = x.size(), k = features();
    Tensor xs = Tensor::matrix(n, k);
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (x[i].size() != k) throw std::invalid_argument("classifier loss: feature dimension mismatch");
      std::copy(x[i].begin(), x[i].end(), xs.row_span(i).begin());
      ys[i] = y[i] ? 1.0 : 0.0;
    }
    ad::Var logits =
        ad::add(ad::matmul(tape.constant(std::move(xs)), p[0]), ad::matmul(tape.constant(Tensor::matrix(n, 1, 1.0)), p[1]));
    ad::Var data = ad::logistic_loss(logits, std::move(ys));
    return ad::add(data, ad::scale(ad::sum(ad::mul(p[0], p[0])), 0.5 * l2));
  }

  FeatureLayout layout_ = FeatureLayout::baseline_only;
  ParameterSet params_;
};

// Full-batch Adam from zero initialization; deterministic.
inline LogisticClassifier train_classifier(const std::vector<Vec>& x, const std::vector<int>& y,
                                           const ClassifierConfig& config,
                                           FeatureLayout layout = FeatureLayout::baseline_only) {
  if (x.empty() || x.size() != y.size()) throw std::invalid_argument("train_classifier: bad training set");
  const auto positives = std::count(y.begin(), y.end(), 1);
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(y.size()))
    throw DataError("train_classifier: training labels contain a single class");
  LogisticClassifier model(x.front().size(), layout);
  Adam adam(model.parameters(), AdamConfig{config.learning_rate});
  for (std::size_t it = 0; it < config.iterations; ++it) {
    LossAndGrads lg = model.loss_and_grads(x, y, config.l2);
    adam.step(model.parameters(), lg.grads);
  }
  return model;
}

struct MetricsReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double acc = 0.0;
  std::optional<double> sen, spe, auc;
  std::size_t n() const noexcept { return tp + fp + tn + fn; }
};

// Mann-Whitney statistic with midranks for ties. Empty when a class is absent.
inline std::optional<double> auc_rank(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw std::invalid_argument("auc: length mismatch");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

inline MetricsReport compute_metrics(std::span<const int> labels, std::span<const double> probabilities,
                                     double threshold = 0.5) {
  if (labels.empty()) throw std::invalid_argument("compute_metrics: no labels");
  if (labels.size() != probabilities.size()) throw std::invalid_argument("compute_metrics: length mismatch");
  MetricsReport m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!std::isfinite(probabilities[i])) throw NumericError("compute_metrics: non-finite probability");
    const bool pred = probabilities[i] >= threshold;
    if (labels[i]) (pred ? m.tp : m.fn)++;
    else (pred ? m.fp : m.tn)++;
  }
  m.acc = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.n());
  if (m.tp + m.fn) m.sen = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  if (m.tn + m.fp) m.spe = static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp);
  m.auc = auc_rank(labels, probabilities);
  return m;
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

inline std::string metrics_csv_header() { return "run_id,mode,acc,sen,spe,auc,n,seed"; }

inline std::string metrics_csv_row(const std::string& run_id, const std::string& mode, const MetricsReport& m,
                                   std::uint64_t seed) {
  return run_id + "," + mode + "," + format_metric(m.acc) + "," + format_metric(m.sen) + "," +
         format_metric(m.spe) + "," + format_metric(m.auc) + "," + std::to_string(m.n()) + "," +
         std::to_string(seed);
}

// Standardize on train, fit, evaluate on test.
struct ClassificationResult {
  LogisticClassifier model;
  Standardizer standardizer;
  MetricsReport metrics;
  Vec test_probabilities;
};

inline ClassificationResult fit_and_evaluate(const std::vector<Vec>& train_x, const std::vector<int>& train_y,
                                             const std::vector<Vec>& test_x, const std::vector<int>& test_y,
                                             const ClassifierConfig& config, FeatureLayout layout) {
  ClassificationResult r;
  r.standardizer = Standardizer::fit(train_x);
  r.model = train_classifier(r.standardizer.apply(train_x), train_y, config, layout);
  for (const Vec& x : test_x) r.test_probabilities.push_back(r.model.predict_proba(r.standardizer.apply(x)));
  r.metrics = compute_metrics(test_y, r.test_probabilities);
  return r;
}

}  // namespace trajdiff

#endif  // TRAJDIFF_CLASSIFY_HPP
