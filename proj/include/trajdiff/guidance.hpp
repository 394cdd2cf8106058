#ifndef TRAJDIFF_GUIDANCE_HPP
#define TRAJDIFF_GUIDANCE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajdiff/cohort.hpp"
#include "trajdiff/diffusion.hpp"
#include "trajdiff/errors.hpp"
#include "trajdiff/io_util.hpp"
#include "trajdiff/log.hpp"
#include "trajdiff/optim.hpp"
#include "trajdiff/parallel.hpp"
#include "trajdiff/rng.hpp"
#include "trajdiff/tape.hpp"

namespace trajdiff {

// ---------------------------------------------------------------------------
// Quantization and tokenization

struct QuantizerSpec {
  Vec lower;
  Vec upper;
  std::size_t bins = 64;
  std::vector<std::size_t> widened_dims;  // degenerate dimensions that were widened

  std::size_t dim() const noexcept { return lower.size(); }
  std::size_t vocab_size() const noexcept { return dim() * bins; }
  double width(std::size_t j) const { return (upper[j] - lower[j]) / static_cast<double>(bins); }

  std::size_t bin(std::size_t j, double value) const {
    const double pos = std::floor((value - lower[j]) / width(j));
    if (!(pos > 0.0)) return 0;  // also catches NaN
    return std::min(static_cast<std::size_t>(pos), bins - 1);
  }
  double center(std::size_t j, std::size_t b) const {
    return lower[j] + (static_cast<double>(b) + 0.5) * width(j);
  }

  nlohmann::ordered_json to_json() const { return {{"bins", bins}, {"lower", lower}, {"upper", upper}}; }
  static QuantizerSpec from_json(const nlohmann::json& j) {
    QuantizerSpec q;
    q.bins = j.at("bins").get<std::size_t>();
    q.lower = j.at("lower").get<Vec>();
    q.upper = j.at("upper").get<Vec>();
    if (q.lower.size() != q.upper.size() || q.bins < 2) throw DataError("malformed quantizer");
    return q;
  }
};

// Token id = dim_index * V + bin_index.
struct TokenSequence {
  std::vector<std::size_t> ids;
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// Bounds at the 0.5th / 99.5th percentiles per dimension, V uniform bins.
inline QuantizerSpec fit_quantizer(const std::vector<Vec>& latents, std::size_t bins, double lo_q = 0.5,
                                   double hi_q = 99.5) {
  if (latents.empty()) throw std::invalid_argument("fit_quantizer: no training latents");
  if (bins < 2) throw std::invalid_argument("fit_quantizer: need at least two bins");
  const std::size_t d = latents.front().size();
  QuantizerSpec q;
  q.bins = bins;
  for (std::size_t j = 0; j < d; ++j) {
    Vec col;
    col.reserve(latents.size());
    for (const Vec& z : latents) col.push_back(z.at(j));
    double lo = percentile(col, lo_q), hi = percentile(std::move(col), hi_q);
    if (!(lo < hi)) {
      const double margin = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(lo));
      lo -= margin;
      hi += margin;
      q.widened_dims.push_back(j);
      warn("quantizer: dimension " + std::to_string(j) + " is degenerate; widened bounds");
    }
    q.lower.push_back(lo);
    q.upper.push_back(hi);
  }
  return q;
}

// Out-of-range values clamp to the edge bins.
inline TokenSequence quantize(std::span<const double> z, const QuantizerSpec& spec) {
  if (z.size() != spec.dim()) throw std::invalid_argument("quantize: dimension mismatch");
  TokenSequence t;
  t.ids.resize(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) t.ids[j] = j * spec.bins + spec.bin(j, z[j]);
  return t;
}

// Bin centers.
inline Vec dequantize(const TokenSequence& tokens, const QuantizerSpec& spec) {
  if (tokens.ids.size() != spec.dim()) throw std::invalid_argument("dequantize: wrong token count");
  Vec z(spec.dim());
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    const std::size_t id = tokens.ids[j];
    if (id >= spec.vocab_size() || id / spec.bins != j)
      throw std::out_of_range("token id " + std::to_string(id) + " out of range for dimension " + std::to_string(j));
    z[j] = spec.center(j, id % spec.bins);
  }
  return z;
}

// ---------------------------------------------------------------------------
// Biomarker scorer

// Maps a token sequence to predicted structural measurements. The token
// regressor below is one implementation; a remote language-model client can
// implement the same interface.
class BiomarkerScorer {
 public:
  virtual ~BiomarkerScorer() = default;
  virtual std::size_t output_dim() const = 0;
  virtual Vec predict(const TokenSequence& tokens) const = 0;
};

struct ScorerConfig {
  std::size_t embed_dim = 32;
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  double learning_rate = 3e-3;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
};

// Token embedding table, mean pooling, linear head.
class TokenScorer final : public BiomarkerScorer {
 public:
  TokenScorer() = default;

  TokenScorer(std::size_t tokens_per_sequence, std::size_t vocab, std::size_t embed_dim, std::size_t output_dim,
              std::uint64_t seed)
      : sequence_length_(tokens_per_sequence) {
    Rng rng(derive_seed(seed, {seed_tag::kInit, 0x5c0e}));
    Tensor emb = Tensor::matrix(vocab, embed_dim);
    for (double& v : emb.data()) v = 0.1 * rng.normal();
    Tensor head = Tensor::matrix(embed_dim, output_dim);
    const double sd = 1.0 / std::sqrt(static_cast<double>(embed_dim));
    for (double& v : head.data()) v = sd * rng.normal();
    params_.add("embedding", std::move(emb));
    params_.add("w_head", std::move(head));
    params_.add("b_head", Tensor::matrix(1, output_dim));
  }

  std::size_t output_dim() const override { return params_[2].cols(); }
  std::size_t vocab_size() const { return params_[0].rows(); }
  std::size_t embed_dim() const { return params_[0].cols(); }
  std::size_t sequence_length() const noexcept { return sequence_length_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  Vec predict(const TokenSequence& tokens) const override {
    const Tensor& emb = params_[0];
    const Tensor& head = params_[1];
    const Tensor& bias = params_[2];
    const std::size_t e = emb.cols();
    Vec pooled(e, 0.0);
    for (std::size_t id : tokens.ids) {
      if (id >= emb.rows()) throw std::out_of_range("token id out of vocabulary");
      for (std::size_t k = 0; k < e; ++k) pooled[k] += emb.at(id, k);
    }
    const double inv = 1.0 / static_cast<double>(tokens.ids.size());
    for (double& v : pooled) v *= inv;
    Vec out(bias.data().begin(), bias.data().end());
    detail::accumulate_row(pooled, head, out);
    return out;
  }

  // Mean squared error over batch and components.
  LossAndGrads loss_and_grads(std::span<const TokenSequence> tokens, std::span<const Vec> targets) const {
    ad::Tape tape;
    auto p = params_.bind(tape);
    ad::Var loss = traced_loss(tape, p, tokens, targets);
    tape.backward(loss);
    LossAndGrads out;
    out.loss = loss.value()[0];
    for (const auto& v : p) out.grads.push_back(tape.grad(v));
    return out;
  }

  double loss(std::span<const TokenSequence> tokens, std::span<const Vec> targets) const {
    ad::Tape tape;
    auto p = params_.bind(tape);
    return traced_loss(tape, p, tokens, targets).value()[0];
  }

  nlohmann::ordered_json to_json() const {
    return {{"sequence_length", sequence_length_}, {"params", params_.to_json()}};
  }
  static TokenScorer from_json(const nlohmann::json& j) {
    const auto& p = j.at("params");
    const Shape emb = p.at("embedding").at("shape").get<Shape>();
    const Shape head = p.at("w_head").at("shape").get<Shape>();
    if (emb.size() != 2 || head.size() != 2) throw DataError("malformed scorer parameters");
    TokenScorer s(j.at("sequence_length").get<std::size_t>(), emb[0], emb[1], head[1], 0);
    s.params_.load_json(p);
    return s;
  }

 private:
  ad::Var traced_loss(ad::Tape& tape, const std::vector<ad::Var>& p, std::span<const TokenSequence> tokens,
                      std::span<const Vec> targets) const {
    if (tokens.size() != targets.size() || tokens.empty())
      throw std::invalid_argument("scorer loss: need equal, nonempty token and target batches");
    const std::size_t rows = tokens.size(), vocab = vocab_size(), b = output_dim();
    Tensor pool = Tensor::matrix(rows, vocab);
    Tensor y = Tensor::matrix(rows, b);
    for (std::size_t r = 0; r < rows; ++r) {
      const double w = 1.0 / static_cast<double>(tokens[r].ids.size());
      for (std::size_t id : tokens[r].ids) pool.at(r, id) += w;
      if (targets[r].size() != b) throw std::invalid_argument("scorer loss: target dimension mismatch");
      std::copy(targets[r].begin(), targets[r].end(), y.row_span(r).begin());
    }
    ad::Var pooled = ad::matmul(tape.constant(std::move(pool)), p[0]);
    ad::Var out = ad::add(ad::matmul(pooled, p[1]), ad::matmul(tape.constant(Tensor::matrix(rows, 1, 1.0)), p[2]));
    return ad::squared_error(out, tape.constant(std::move(y)));
  }

  std::size_t sequence_length_ = 0;
  ParameterSet params_;
};

struct ScorerTraining {
  TokenScorer scorer;
  Vec holdout_r2;  // per biomarker component
  double final_loss = 0.0;
};

inline double mean_of(const Vec& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Coefficient of determination per output component.
inline Vec r_squared(const std::vector<Vec>& truth, const std::vector<Vec>& pred) {
  if (truth.empty()) return {};
  const std::size_t b = truth.front().size();
  Vec out(b, 0.0);
  for (std::size_t k = 0; k < b; ++k) {
    double mean = 0.0;
    for (const Vec& y : truth) mean += y[k];
    mean /= static_cast<double>(truth.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      ss_res += (truth[i][k] - pred[i][k]) * (truth[i][k] - pred[i][k]);
      ss_tot += (truth[i][k] - mean) * (truth[i][k] - mean);
    }
    out[k] = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  }
  return out;
}

inline ScorerTraining train_scorer(const std::vector<TokenSequence>& tokens, const std::vector<Vec>& biomarkers,
                                   std::size_t vocab, const ScorerConfig& config) {
  if (tokens.empty() || tokens.size() != biomarkers.size())
    throw std::invalid_argument("train_scorer: need a nonempty set of (tokens, biomarkers) pairs");
  const std::size_t n = tokens.size();
  Rng split_rng(derive_seed(config.seed, {seed_tag::kScorer, 1}));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), split_rng.engine());
  std::size_t n_hold = static_cast<std::size_t>(std::floor(config.holdout_fraction * static_cast<double>(n)));
  if (n_hold >= n) n_hold = 0;
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
  std::vector<std::size_t> hold_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));

  ScorerTraining out;
  out.scorer = TokenScorer(tokens.front().ids.size(), vocab, config.embed_dim, biomarkers.front().size(), config.seed);
  Adam adam(out.scorer.parameters(), AdamConfig{config.learning_rate});
  std::vector<TokenSequence> bt;
  std::vector<Vec> by;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, {seed_tag::kScorer, 2, epoch}));
    std::shuffle(train_idx.begin(), train_idx.end(), rng.engine());
    double total = 0.0;
    for (std::size_t start = 0; start < train_idx.size(); start += config.batch_size) {
      bt.clear();
      by.clear();
      for (std::size_t k = start; k < std::min(train_idx.size(), start + config.batch_size); ++k) {
        bt.push_back(tokens[train_idx[k]]);
        by.push_back(biomarkers[train_idx[k]]);
      }
      LossAndGrads lg = out.scorer.loss_and_grads(bt, by);
      adam.step(out.scorer.parameters(), lg.grads);
      total += lg.loss * static_cast<double>(bt.size());
    }
    out.final_loss = total / static_cast<double>(train_idx.size());
  }
  if (!hold_idx.empty()) {
    std::vector<Vec> truth, pred;
    for (std::size_t i : hold_idx) {
      truth.push_back(biomarkers[i]);
      pred.push_back(out.scorer.predict(tokens[i]));
    }
    out.holdout_r2 = r_squared(truth, pred);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Expected values

// Least-squares affine map from a baseline vector to the vector at each
// position 1..5, with per-component residual std.
class AffineExpectation {
 public:
  struct PositionFit {
    Tensor coef;  // (in + 1) x out; last row is the intercept
    Vec sigma;
    bool fallback = false;
    std::size_t pairs = 0;
  };

  static constexpr double kSigmaFloor = 1e-6;

  static AffineExpectation fit(const std::array<std::vector<Vec>, kGridLength>& inputs,
                               const std::array<std::vector<Vec>, kGridLength>& outputs, std::size_t in_dim,
                               std::size_t out_dim, const char* what = "expected model") {
    AffineExpectation m;
    m.in_dim_ = in_dim;
    m.out_dim_ = out_dim;
    for (std::size_t pos = 1; pos < kGridLength; ++pos) {
      const auto& xs = inputs[pos];
      const auto& ys = outputs[pos];
      PositionFit f;
      f.pairs = xs.size();
      f.coef = Tensor::matrix(in_dim + 1, out_dim);
      f.sigma.assign(out_dim, kSigmaFloor);
      const std::size_t n = xs.size();
      if (n < in_dim + 2) {
        f.fallback = true;
        warn(std::string(what) + ": only " + std::to_string(n) + " pairs at position " + std::to_string(pos) +
             "; using the population mean");
        if (n > 0) {
          for (std::size_t k = 0; k < out_dim; ++k) {
            double mean = 0.0;
            for (const Vec& y : ys) mean += y[k];
            mean /= static_cast<double>(n);
            double ss = 0.0;
            for (const Vec& y : ys) ss += (y[k] - mean) * (y[k] - mean);
            f.coef.at(in_dim, k) = mean;
            f.sigma[k] = std::max(kSigmaFloor, std::sqrt(ss / static_cast<double>(n)));
          }
        } else {
          f.sigma.assign(out_dim, 1.0);
        }
        m.fits_[pos] = std::move(f);
        continue;
      }
      Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in_dim + 1));
      Eigen::MatrixXd y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_dim));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < in_dim; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = xs[i][j];
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(in_dim)) = 1.0;
        for (std::size_t k = 0; k < out_dim; ++k) y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = ys[i][k];
      }
      const Eigen::MatrixXd beta = x.colPivHouseholderQr().solve(y);
      const Eigen::MatrixXd resid = y - x * beta;
      const double dof = static_cast<double>(n - (in_dim + 1));
      for (std::size_t k = 0; k < out_dim; ++k) {
        for (std::size_t j = 0; j <= in_dim; ++j)
          f.coef.at(j, k) = beta(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
        const double ss = resid.col(static_cast<Eigen::Index>(k)).squaredNorm();
        f.sigma[k] = std::max(kSigmaFloor, std::sqrt(ss / dof));
      }
      m.fits_[pos] = std::move(f);
    }
    return m;
  }

  std::size_t input_dim() const noexcept { return in_dim_; }
  std::size_t output_dim() const noexcept { return out_dim_; }
  const PositionFit& at(std::size_t pos) const {
    if (pos < 1 || pos >= kGridLength) throw std::out_of_range("expected model position must be 1..5");
    return fits_[pos];
  }

  Vec mean(std::size_t pos, std::span<const double> baseline) const {
    const PositionFit& f = at(pos);
    if (baseline.size() != in_dim_) throw std::invalid_argument("expected model: baseline dimension mismatch");
    Vec mu(out_dim_);
    for (std::size_t k = 0; k < out_dim_; ++k) {
      double acc = f.coef.at(in_dim_, k);
      for (std::size_t j = 0; j < in_dim_; ++j) acc += f.coef.at(j, k) * baseline[j];
      mu[k] = acc;
    }
    return mu;
  }
  const Vec& sigma(std::size_t pos) const { return at(pos).sigma; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["input_dim"] = in_dim_;
    j["output_dim"] = out_dim_;
    nlohmann::ordered_json positions = nlohmann::ordered_json::array();
    for (std::size_t pos = 1; pos < kGridLength; ++pos)
      positions.push_back({{"position", pos}, {"coef", fits_[pos].coef.storage()}, {"sigma", fits_[pos].sigma},
                           {"fallback", fits_[pos].fallback}, {"pairs", fits_[pos].pairs}});
    j["positions"] = positions;
    return j;
  }
  static AffineExpectation from_json(const nlohmann::json& j) {
    AffineExpectation m;
    m.in_dim_ = j.at("input_dim").get<std::size_t>();
    m.out_dim_ = j.at("output_dim").get<std::size_t>();
    for (const auto& p : j.at("positions")) {
      const std::size_t pos = p.at("position").get<std::size_t>();
      if (pos < 1 || pos >= kGridLength) throw DataError("expected model: bad position");
      PositionFit f;
      f.coef = Tensor::matrix(m.in_dim_ + 1, m.out_dim_, p.at("coef").get<Vec>());
      f.sigma = p.at("sigma").get<Vec>();
      f.fallback = p.at("fallback").get<bool>();
      f.pairs = p.at("pairs").get<std::size_t>();
      m.fits_[pos] = std::move(f);
    }
    return m;
  }

 private:
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  std::array<PositionFit, kGridLength> fits_{};
};

// Baseline biomarkers -> expected biomarkers at tau, observed values only.
inline AffineExpectation fit_expected_model(const std::vector<TrajectoryRecord>& training) {
  if (training.empty()) throw std::invalid_argument("fit_expected_model: empty training split");
  std::array<std::vector<Vec>, kGridLength> xs, ys;
  std::size_t b = 0;
  for (const auto& r : training) {
    if (!r.biomarkers[0]) continue;
    b = r.biomarkers[0]->size();
    for (std::size_t pos = 1; pos < kGridLength; ++pos)
      if (r.biomarkers[pos] && r.flags[pos] == Provenance::observed) {
        xs[pos].push_back(*r.biomarkers[0]);
        ys[pos].push_back(*r.biomarkers[pos]);
      }
  }
  if (b == 0) throw std::invalid_argument("fit_expected_model: no baseline biomarkers");
  return AffineExpectation::fit(xs, ys, b, b, "expected biomarker model");
}

// Baseline latent -> expected latent at tau; backs the no-feature-adaptation
// ablation.
inline AffineExpectation fit_latent_expectation(const std::vector<TrajectoryRecord>& training) {
  if (training.empty()) throw std::invalid_argument("fit_latent_expectation: empty training split");
  std::array<std::vector<Vec>, kGridLength> xs, ys;
  const std::size_t d = training.front().latents[0]->size();
  for (const auto& r : training)
    for (std::size_t pos = 1; pos < kGridLength; ++pos)
      if (r.present(pos) && r.flags[pos] == Provenance::observed) {
        xs[pos].push_back(*r.latents[0]);
        ys[pos].push_back(*r.latents[pos]);
      }
  return AffineExpectation::fit(xs, ys, d, d, "expected latent model");
}

// -sum_b ((y_b - mu_b) / sigma_b)^2; higher is more plausible.
inline double plausibility_score(std::span<const double> y, std::span<const double> mu,
                                 std::span<const double> sigma) {
  if (y.size() != mu.size() || y.size() != sigma.size())
    throw std::invalid_argument("plausibility_score: dimension mismatch");
  double acc = 0.0;
  for (std::size_t b = 0; b < y.size(); ++b) {
    if (!(sigma[b] > 0.0)) throw std::invalid_argument("plausibility_score: sigma must be positive");
    const double z = (y[b] - mu[b]) / sigma[b];
    acc += z * z;
  }
  return -acc;
}

// Index of the maximum; ties go to the lowest index.
inline std::size_t select_best(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("select_best: no candidates");
  std::size_t best = 0;
  for (std::size_t n = 1; n < scores.size(); ++n)
    if (scores[n] > scores[best]) best = n;
  return best;
}

// ---------------------------------------------------------------------------
// Candidate evaluation

class CandidateEvaluator {
 public:
  virtual ~CandidateEvaluator() = default;
  // One plausibility score per candidate latent at grid position `pos`.
  virtual Vec score(std::size_t pos, const TrajectoryRecord& baseline, std::span<const Vec> candidates) const = 0;
};

// Tokenize, predict biomarkers, compare with the patient's expected values.
class BiomarkerEvaluator final : public CandidateEvaluator {
 public:
  BiomarkerEvaluator(const QuantizerSpec& quantizer, const BiomarkerScorer& scorer, const AffineExpectation& expected)
      : quantizer_(&quantizer), scorer_(&scorer), expected_(&expected) {}

  Vec score(std::size_t pos, const TrajectoryRecord& baseline, std::span<const Vec> candidates) const override {
    if (!baseline.biomarkers[0]) throw std::invalid_argument("guided sampling needs baseline biomarkers");
    const Vec mu = expected_->mean(pos, *baseline.biomarkers[0]);
    const Vec& sigma = expected_->sigma(pos);
    Vec scores;
    scores.reserve(candidates.size());
    for (const Vec& z : candidates) {
      const Vec y = scorer_->predict(quantize(z, *quantizer_));
      scores.push_back(plausibility_score(y, mu, sigma));
    }
    return scores;
  }

 private:
  const QuantizerSpec* quantizer_;
  const BiomarkerScorer* scorer_;
  const AffineExpectation* expected_;
};

// Scores raw latents against a latent-space expectation; no tokens, no scorer.
class RawLatentEvaluator final : public CandidateEvaluator {
 public:
  explicit RawLatentEvaluator(const AffineExpectation& expected) : expected_(&expected) {}

  Vec score(std::size_t pos, const TrajectoryRecord& baseline, std::span<const Vec> candidates) const override {
    const Vec mu = expected_->mean(pos, *baseline.latents[0]);
    const Vec& sigma = expected_->sigma(pos);
    Vec scores;
    scores.reserve(candidates.size());
    for (const Vec& z : candidates) scores.push_back(plausibility_score(z, mu, sigma));
    return scores;
  }

 private:
  const AffineExpectation* expected_;
};

// ---------------------------------------------------------------------------
// Guided autoregressive sampling

struct GenerationStep {
  std::size_t position = 1;
  std::size_t selected = 0;
  Vec latent;
  Vec scores;
  std::vector<std::uint64_t> seeds;

  friend bool operator==(const GenerationStep&, const GenerationStep&) = default;
};

struct GeneratedTrajectory {
  std::string patient_id;
  Label label = Label::sMCI;
  std::size_t candidates = 1;
  std::vector<GenerationStep> steps;  // positions 1..5 in order

  const Vec& latent(std::size_t pos) const { return steps.at(pos - 1).latent; }
  friend bool operator==(const GeneratedTrajectory&, const GeneratedTrajectory&) = default;
};

// Seed of candidate n at position tau for patient p.
inline std::uint64_t candidate_seed(std::uint64_t run_seed, const std::string& patient_id, std::size_t pos,
                                    std::size_t n) {
  return derive_seed(run_seed, {seed_tag::kSample, fnv1a64(patient_id), pos, n});
}

// Baseline plus the selected history; positions >= pos are absent.
inline TrajectoryRecord history_record(const TrajectoryRecord& baseline, const std::vector<GenerationStep>& chosen) {
  TrajectoryRecord h;
  h.patient_id = baseline.patient_id;
  h.label = baseline.label;
  h.latents[0] = baseline.latents[0];
  h.biomarkers[0] = baseline.biomarkers[0];
  for (const auto& s : chosen) {
    h.latents[s.position] = s.latent;
    h.flags[s.position] = Provenance::imputed;
  }
  return h;
}

// For tau = 1..5: condition on baseline and previously selected latents, draw
// N candidates with their own derived seeds, score, keep the argmax.
template <Denoiser M>
GeneratedTrajectory guided_autoregressive_sample(const ReverseSampler<M>& sampler, const CandidateEvaluator& evaluator,
                                                 const TrajectoryRecord& baseline, std::size_t n_candidates,
                                                 std::uint64_t run_seed) {
  if (n_candidates < 1) throw std::invalid_argument("guided sampling needs at least one candidate");
  if (!baseline.present(0)) throw std::invalid_argument("guided sampling needs a baseline latent");
  GeneratedTrajectory out;
  out.patient_id = baseline.patient_id;
  out.label = baseline.label;
  out.candidates = n_candidates;
  for (std::size_t pos = 1; pos < kGridLength; ++pos) {
    const ConditionSequence cond = build_condition(history_record(baseline, out.steps), pos, TaskMode::extrapolation);
    const PreparedCondition prepared = sampler.model().prepare(cond);
    GenerationStep step;
    step.position = pos;
    std::vector<Vec> candidates;
    candidates.reserve(n_candidates);
    for (std::size_t n = 0; n < n_candidates; ++n) {
      step.seeds.push_back(candidate_seed(run_seed, baseline.patient_id, pos, n));
      Rng rng(step.seeds.back());
      candidates.push_back(sampler.sample(prepared, rng));
    }
    step.scores = evaluator.score(pos, baseline, candidates);
    for (double s : step.scores)
      if (!std::isfinite(s)) throw NumericError("non-finite plausibility score");
    step.selected = select_best(step.scores);
    step.latent = std::move(candidates[step.selected]);
    out.steps.push_back(std::move(step));
  }
  return out;
}

template <Denoiser M>
std::vector<GeneratedTrajectory> generate_trajectories(const ReverseSampler<M>& sampler,
                                                       const CandidateEvaluator& evaluator,
                                                       const std::vector<TrajectoryRecord>& records,
                                                       std::size_t n_candidates, std::uint64_t run_seed,
                                                       std::size_t threads = 1) {
  std::vector<GeneratedTrajectory> out(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    out[i] = guided_autoregressive_sample(sampler, evaluator, records[i], n_candidates, run_seed);
  });
  return out;
}

// Regenerates every selected latent from its recorded seed and selected
// history. True when all match bit for bit.
template <Denoiser M>
bool replay_matches(const ReverseSampler<M>& sampler, const TrajectoryRecord& baseline,
                    const GeneratedTrajectory& traj) {
  std::vector<GenerationStep> history;
  for (const auto& step : traj.steps) {
    const ConditionSequence cond = build_condition(history_record(baseline, history), step.position,
                                                   TaskMode::extrapolation);
    if (step.selected >= step.seeds.size()) return false;
    const Vec z = sampler.sample(cond, step.seeds[step.selected]);
    if (z != step.latent) return false;
    history.push_back(step);
  }
  return true;
}

// Mean squared error over positions 1..5 and all dimensions.
inline double trajectory_mse(const GeneratedTrajectory& generated, const TrajectoryRecord& truth) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& step : generated.steps) {
    const Vec& z = truth.latents.at(step.position).value();
    for (std::size_t j = 0; j < z.size(); ++j) {
      acc += (step.latent[j] - z[j]) * (step.latent[j] - z[j]);
      ++n;
    }
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Trajectory file: header line, then one object per patient.

inline nlohmann::ordered_json to_json(const GeneratedTrajectory& t) {
  nlohmann::ordered_json steps = nlohmann::ordered_json::array();
  for (const auto& s : t.steps)
    steps.push_back({{"position", s.position}, {"selected", s.selected}, {"latent", s.latent},
                     {"scores", s.scores}, {"seeds", s.seeds}});
  return {{"patient_id", t.patient_id}, {"label", to_string(t.label)}, {"candidates", t.candidates}, {"steps", steps}};
}

inline GeneratedTrajectory trajectory_from_json(const nlohmann::json& j) {
  GeneratedTrajectory t;
  t.patient_id = j.at("patient_id").get<std::string>();
  t.label = parse_label(j.at("label").get<std::string>());
  t.candidates = j.at("candidates").get<std::size_t>();
  for (const auto& s : j.at("steps")) {
    GenerationStep step;
    step.position = s.at("position").get<std::size_t>();
    step.selected = s.at("selected").get<std::size_t>();
    step.latent = s.at("latent").get<Vec>();
    step.scores = s.at("scores").get<Vec>();
    step.seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
    t.steps.push_back(std::move(step));
  }
  if (t.steps.size() != kLastPosition) throw DataError("trajectory for " + t.patient_id + " must have 5 steps");
  for (std::size_t k = 0; k < t.steps.size(); ++k)
    if (t.steps[k].position != k + 1) throw DataError("trajectory steps out of order for " + t.patient_id);
  return t;
}

struct TrajectoryFile {
  std::optional<ArtifactHeader> header;
  std::size_t candidates = 0;
  std::uint64_t run_seed = 0;
  std::vector<GeneratedTrajectory> trajectories;
};

inline std::string serialize_trajectories(const TrajectoryFile& file) {
  std::string out;
  if (file.header) {
    nlohmann::ordered_json h = header_to_json(*file.header);
    h["candidates"] = file.candidates;
    h["run_seed"] = file.run_seed;
    out += h.dump() + "\n";
  }
  for (const auto& t : file.trajectories) out += to_json(t).dump() + "\n";
  return out;
}

inline TrajectoryFile parse_trajectories(const std::string& text) {
  TrajectoryFile out;
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
        out.candidates = j.value("candidates", std::size_t{0});
        out.run_seed = j.value("run_seed", std::uint64_t{0});
        out.header = h;
        continue;
      }
      out.trajectories.push_back(trajectory_from_json(j));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline void write_trajectories(const TrajectoryFile& file, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_trajectories(file));
}

inline TrajectoryFile read_trajectories(const std::filesystem::path& path) {
  return parse_trajectories(read_file(path));
}

}  // namespace trajdiff

#endif  // TRAJDIFF_GUIDANCE_HPP
