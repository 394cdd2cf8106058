#ifndef TRAJDIFF_DIFFUSION_HPP
#define TRAJDIFF_DIFFUSION_HPP

#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajdiff/cohort.hpp"
#include "trajdiff/errors.hpp"
#include "trajdiff/optim.hpp"
#include "trajdiff/rng.hpp"
#include "trajdiff/tape.hpp"
#include "trajdiff/tensor.hpp"

namespace trajdiff {

// ---------------------------------------------------------------------------
// Noise schedule. Steps are 1-based: beta(1) .. beta(T).

struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  double beta_start = 0.0;
  double beta_end = 0.0;

  std::size_t steps() const noexcept { return betas.size(); }
  double beta(std::size_t t) const { return betas.at(t - 1); }
  double alpha(std::size_t t) const { return alphas.at(t - 1); }
  // alpha_bar(0) == 1.
  double alpha_bar(std::size_t t) const { return t == 0 ? 1.0 : alpha_bars.at(t - 1); }

  // DDPM posterior variance beta_t (1 - abar_{t-1}) / (1 - abar_t).
  double posterior_variance(std::size_t t) const {
    return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
  }

  void check_step(std::size_t t) const {
    if (t < 1 || t > steps())
      throw std::out_of_range("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  }
};

inline NoiseSchedule build_schedule(std::size_t steps, double beta_start = 1e-4, double beta_end = 0.02) {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("schedule requires 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.resize(steps);
  s.alphas.resize(steps);
  s.alpha_bars.resize(steps);
  double running = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    s.betas[i] = beta_start + (beta_end - beta_start) * frac;
    s.alphas[i] = 1.0 - s.betas[i];
    running *= s.alphas[i];
    s.alpha_bars[i] = running;
  }
  return s;
}

// Fixed sinusoidal code of an integer index: [sin(k w_0), cos(k w_0), sin(k w_1), ...].
inline Vec sinusoidal_encoding(double index, std::size_t dim) {
  Vec out(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    const double pair = static_cast<double>(j / 2 * 2);
    const double freq = std::pow(10000.0, -pair / static_cast<double>(dim));
    out[j] = j % 2 == 0 ? std::sin(index * freq) : std::cos(index * freq);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Condition sequence

enum class TaskMode { interpolation, extrapolation };

// What the denoiser sees about a trajectory. Masked slots carry no values at
// all, so nothing stored at a masked position can reach the network.
struct ConditionSequence {
  std::size_t target = 1;
  std::array<bool, kGridLength> masked{};
  std::array<Vec, kGridLength> values;  // empty where masked

  friend bool operator==(const ConditionSequence&, const ConditionSequence&) = default;
};

// Masks `extra` plus every position the record lacks. The target must be in
// `extra`.
inline ConditionSequence make_condition(const TrajectoryRecord& record, std::size_t target,
                                        const std::array<bool, kGridLength>& extra) {
  if (!record.present(0)) throw std::invalid_argument("condition requires a baseline latent");
  if (target == 0 || target >= kGridLength) throw std::out_of_range("target position out of range");
  if (!extra[target]) throw std::invalid_argument("target position must be masked");
  if (extra[0]) throw std::invalid_argument("baseline can never be masked");
  ConditionSequence c;
  c.target = target;
  for (std::size_t pos = 0; pos < kGridLength; ++pos) {
    c.masked[pos] = extra[pos] || !record.present(pos);
    if (!c.masked[pos]) c.values[pos] = *record.latents[pos];
  }
  return c;
}

inline ConditionSequence build_condition(const TrajectoryRecord& record, std::size_t target, TaskMode mode) {
  std::array<bool, kGridLength> extra{};
  if (mode == TaskMode::interpolation) {
    if (target < 1 || target > kGridLength - 2)
      throw std::out_of_range("interpolation target must be in 1..4, got " + std::to_string(target));
    extra[target] = true;
  } else {
    if (target < 1 || target > kLastPosition)
      throw std::out_of_range("extrapolation target must be in 1..5, got " + std::to_string(target));
    for (std::size_t pos = target; pos < kGridLength; ++pos) extra[pos] = true;
  }
  return make_condition(record, target, extra);
}

// ---------------------------------------------------------------------------
// Forward process

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
inline Vec forward_diffuse(std::span<const double> z0, std::size_t t, std::span<const double> epsilon,
                           const NoiseSchedule& schedule) {
  schedule.check_step(t);
  if (z0.size() != epsilon.size()) throw std::invalid_argument("forward_diffuse: dimension mismatch");
  const double a = std::sqrt(schedule.alpha_bar(t));
  const double b = std::sqrt(1.0 - schedule.alpha_bar(t));
  Vec out(z0.size());
  for (std::size_t j = 0; j < z0.size(); ++j) out[j] = a * z0[j] + b * epsilon[j];
  return out;
}

// One kernel of the chain: z_t = sqrt(1 - beta_t) z_{t-1} + sqrt(beta_t) noise.
inline Vec forward_step(std::span<const double> z_prev, std::size_t t, std::span<const double> noise,
                        const NoiseSchedule& schedule) {
  schedule.check_step(t);
  const double a = std::sqrt(schedule.alpha(t));
  const double b = std::sqrt(schedule.beta(t));
  Vec out(z_prev.size());
  for (std::size_t j = 0; j < z_prev.size(); ++j) out[j] = a * z_prev[j] + b * noise[j];
  return out;
}

// ---------------------------------------------------------------------------
// Reverse process

// mu = (z_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t); noise only for t > 1.
inline Vec denoise_mean(std::span<const double> z_t, std::span<const double> eps_hat, std::size_t t,
                        const NoiseSchedule& schedule) {
  schedule.check_step(t);
  const double coef = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
  Vec mu(z_t.size());
  for (std::size_t j = 0; j < z_t.size(); ++j) mu[j] = inv_sqrt_alpha * (z_t[j] - coef * eps_hat[j]);
  return mu;
}

inline Vec denoise_step(std::span<const double> z_t, std::span<const double> eps_hat, std::size_t t,
                        const NoiseSchedule& schedule, Rng& rng) {
  Vec z = denoise_mean(z_t, eps_hat, t, schedule);
  if (t > 1) {
    const double sigma = std::sqrt(schedule.posterior_variance(t));
    for (double& v : z) v += sigma * rng.normal();
  }
  return z;
}

// ---------------------------------------------------------------------------
// Denoiser

struct DenoiserConfig {
  std::size_t latent_dim = 16;
  std::size_t hidden = 128;

  std::size_t input_dim() const noexcept { return (kGridLength + 3) * latent_dim; }
  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

// One supervised denoising example: predict `epsilon` from forward_diffuse(z0, t, epsilon).
struct DenoisingSample {
  ConditionSequence condition;
  Vec z0;
  std::size_t t = 1;
  Vec epsilon;
};

struct LossAndGrads {
  double loss = 0.0;
  std::vector<Tensor> grads;  // parameter order
};

// Condition projected through the input layer; fixed for a whole reverse chain.
struct PreparedCondition {
  Vec projection;  // hidden-width
};

// Anything that can drive sampling and training in the rest of the pipeline.
template <class M>
concept Denoiser = requires(const M& cm, M& m, const ConditionSequence& c, const PreparedCondition& pc,
                            std::span<const double> z, std::size_t t, const NoiseSchedule& s,
                            std::span<const DenoisingSample> batch) {
  { cm.latent_dim() } -> std::convertible_to<std::size_t>;
  { cm.prepare(c) } -> std::same_as<PreparedCondition>;
  { cm.step_projection(t) } -> std::same_as<Vec>;
  { cm.predict(pc, z, std::span<const double>{}) } -> std::same_as<Vec>;
  { cm.loss_and_grads(s, batch) } -> std::same_as<LossAndGrads>;
  { m.parameters() } -> std::same_as<ParameterSet&>;
};

namespace detail {

// out += x W, with W row-major (len(x) x len(out)). Fixed accumulation order
// per output element, independent of how many rows are processed.
inline void accumulate_row(std::span<const double> x, const Tensor& w, std::span<double> out) {
  const std::size_t n = w.cols();
  const double* wd = w.data().data();
  double* o = out.data();
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double xk = x[k];
    const double* wr = wd + k * n;
    for (std::size_t j = 0; j < n; ++j) o[j] += xk * wr[j];
  }
}

}  // namespace detail

// Residual two-hidden-layer MLP over [z_t, c_0..c_5, T_i, step(t)].
// The input weight matrix is stored as four row blocks, one per input group.
class MlpDenoiser {
 public:
  MlpDenoiser() = default;

  MlpDenoiser(DenoiserConfig config, std::uint64_t seed) : config_(config) {
    const std::size_t d = config.latent_dim, h = config.hidden;
    if (d == 0 || h == 0) throw std::invalid_argument("denoiser dimensions must be positive");
    Rng rng(derive_seed(seed, {seed_tag::kInit, 0xd15f}));
    auto gaussian = [&](std::size_t r, std::size_t c, double sd) {
      Tensor t = Tensor::matrix(r, c);
      for (double& v : t.data()) v = sd * rng.normal();
      return t;
    };
    const double in_sd = 1.0 / std::sqrt(static_cast<double>(config.input_dim()));
    const double h_sd = 1.0 / std::sqrt(static_cast<double>(h));
    params_.add("w_noisy", gaussian(d, h, in_sd));
    params_.add("w_cond", gaussian(kGridLength * d, h, in_sd));
    params_.add("w_target", gaussian(d, h, in_sd));
    params_.add("w_step", gaussian(d, h, in_sd));
    params_.add("b_in", Tensor::matrix(1, h));
    params_.add("w_h1", gaussian(h, h, h_sd));
    params_.add("b_h1", Tensor::matrix(1, h));
    params_.add("w_h2", gaussian(h, h, h_sd));
    params_.add("b_h2", Tensor::matrix(1, h));
    params_.add("w_out", gaussian(h, d, h_sd));
    params_.add("b_out", Tensor::matrix(1, d));
    params_.add("m_present", gaussian(1, d, 0.1));
    params_.add("m_absent", gaussian(1, d, 0.1));
    params_.add("z_masked", Tensor::matrix(1, d));
  }

  const DenoiserConfig& config() const noexcept { return config_; }
  std::size_t latent_dim() const noexcept { return config_.latent_dim; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  // c_tau = Z_tau + P_tau + M_present, or Z_masked + P_tau + M_absent.
  std::array<Vec, kGridLength> condition_vectors(const ConditionSequence& c) const {
    const std::size_t d = config_.latent_dim;
    const Tensor& mp = params_.get("m_present");
    const Tensor& ma = params_.get("m_absent");
    const Tensor& zm = params_.get("z_masked");
    std::array<Vec, kGridLength> out;
    for (std::size_t pos = 0; pos < kGridLength; ++pos) {
      Vec v = sinusoidal_encoding(static_cast<double>(pos), d);
      if (c.masked[pos]) {
        for (std::size_t j = 0; j < d; ++j) v[j] += zm[j] + ma[j];
      } else {
        if (c.values[pos].size() != d) throw std::invalid_argument("condition latent has wrong dimension");
        for (std::size_t j = 0; j < d; ++j) v[j] += c.values[pos][j] + mp[j];
      }
      out[pos] = std::move(v);
    }
    return out;
  }

  PreparedCondition prepare(const ConditionSequence& c) const {
    const std::size_t d = config_.latent_dim;
    PreparedCondition pc;
    pc.projection.assign(params_.get("b_in").data().begin(), params_.get("b_in").data().end());
    const auto cvec = condition_vectors(c);
    Vec flat;
    flat.reserve(kGridLength * d);
    for (const auto& v : cvec) flat.insert(flat.end(), v.begin(), v.end());
    detail::accumulate_row(flat, params_.get("w_cond"), pc.projection);
    const Vec target = sinusoidal_encoding(static_cast<double>(c.target), d);
    detail::accumulate_row(target, params_.get("w_target"), pc.projection);
    return pc;
  }

  Vec step_projection(std::size_t t) const {
    Vec out(config_.hidden, 0.0);
    detail::accumulate_row(sinusoidal_encoding(static_cast<double>(t), config_.latent_dim),
                           params_.get("w_step"), out);
    return out;
  }

  // Noise prediction given a prepared condition and the step projection.
  Vec predict(const PreparedCondition& pc, std::span<const double> z_t, std::span<const double> step_proj) const {
    const std::size_t h = config_.hidden;
    if (z_t.size() != config_.latent_dim) throw std::invalid_argument("predict: z_t has wrong dimension");
    Vec pre(pc.projection);
    for (std::size_t j = 0; j < h; ++j) pre[j] += step_proj[j];
    detail::accumulate_row(z_t, params_.get("w_noisy"), pre);
    Vec x(h);
    for (std::size_t j = 0; j < h; ++j) x[j] = kernel::activation(pre[j]);
    for (const char* layer : {"h1", "h2"}) {
      const std::string w = std::string("w_") + layer, b = std::string("b_") + layer;
      Vec a(params_.get(b).data().begin(), params_.get(b).data().end());
      detail::accumulate_row(x, params_.get(w), a);
      for (std::size_t j = 0; j < h; ++j) x[j] += kernel::activation(a[j]);
    }
    Vec out(params_.get("b_out").data().begin(), params_.get("b_out").data().end());
    detail::accumulate_row(x, params_.get("w_out"), out);
    for (double v : out)
      if (!std::isfinite(v)) throw NumericError("denoiser produced a non-finite output");
    return out;
  }

  Vec predict_noise(std::span<const double> z_t, const ConditionSequence& c, std::size_t t) const {
    return predict(prepare(c), z_t, step_projection(t));
  }

  // Mean over batch and dimensions of ||eps - eps_hat||^2, traced for gradients.
  LossAndGrads loss_and_grads(const NoiseSchedule& schedule, std::span<const DenoisingSample> batch) const {
    if (batch.empty()) throw std::invalid_argument("empty training batch");
    ad::Tape tape;
    std::vector<ad::Var> p = params_.bind(tape);
    ad::Var loss = traced_loss(tape, p, schedule, batch);
    tape.backward(loss);
    LossAndGrads out;
    out.loss = loss.value()[0];
    for (const ad::Var& v : p) out.grads.push_back(tape.grad(v));
    return out;
  }

  double loss(const NoiseSchedule& schedule, std::span<const DenoisingSample> batch) const {
    ad::Tape tape;
    std::vector<ad::Var> p = params_.bind(tape);
    return traced_loss(tape, p, schedule, batch).value()[0];
  }

  nlohmann::ordered_json to_json() const {
    return {{"latent_dim", config_.latent_dim}, {"hidden", config_.hidden}, {"params", params_.to_json()}};
  }

  static MlpDenoiser from_json(const nlohmann::json& j) {
    DenoiserConfig cfg;
    cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    MlpDenoiser m(cfg, 0);
    m.params_.load_json(j.at("params"));
    return m;
  }

 private:
  ad::Var traced_loss(ad::Tape& tape, const std::vector<ad::Var>& p, const NoiseSchedule& schedule,
                      std::span<const DenoisingSample> batch) const {
    const std::size_t d = config_.latent_dim, rows = batch.size(), g = kGridLength;
    enum { kNoisy, kCond, kTarget, kStep, kBin, kW1, kB1, kW2, kB2, kWout, kBout, kMp, kMa, kZm };

    Tensor noisy = Tensor::matrix(rows, d), cond = Tensor::matrix(rows, g * d);
    Tensor target = Tensor::matrix(rows, d), step = Tensor::matrix(rows, d);
    Tensor present_ind = Tensor::matrix(rows, g), absent_ind = Tensor::matrix(rows, g);
    Tensor eps = Tensor::matrix(rows, d);
    for (std::size_t r = 0; r < rows; ++r) {
      const DenoisingSample& s = batch[r];
      if (s.z0.size() != d || s.epsilon.size() != d) throw std::invalid_argument("sample has wrong dimension");
      const Vec zt = forward_diffuse(s.z0, s.t, s.epsilon, schedule);
      std::copy(zt.begin(), zt.end(), noisy.row_span(r).begin());
      std::copy(s.epsilon.begin(), s.epsilon.end(), eps.row_span(r).begin());
      const Vec te = sinusoidal_encoding(static_cast<double>(s.condition.target), d);
      std::copy(te.begin(), te.end(), target.row_span(r).begin());
      const Vec se = sinusoidal_encoding(static_cast<double>(s.t), d);
      std::copy(se.begin(), se.end(), step.row_span(r).begin());
      for (std::size_t pos = 0; pos < g; ++pos) {
        const Vec pe = sinusoidal_encoding(static_cast<double>(pos), d);
        const bool masked = s.condition.masked[pos];
        (masked ? absent_ind : present_ind).at(r, pos) = 1.0;
        for (std::size_t j = 0; j < d; ++j)
          cond.at(r, pos * d + j) = pe[j] + (masked ? 0.0 : s.condition.values[pos].at(j));
      }
    }

    // Learned embeddings enter through indicator (rows x 6) * block rows (6 x 6D)
    // masked against the embedding tiled across positions.
    Tensor blocks = Tensor::matrix(g, g * d), tiler = Tensor::matrix(d, g * d);
    for (std::size_t pos = 0; pos < g; ++pos)
      for (std::size_t j = 0; j < d; ++j) {
        blocks.at(pos, pos * d + j) = 1.0;
        tiler.at(j, pos * d + j) = 1.0;
      }
    const ad::Var ones = tape.constant(Tensor::matrix(rows, 1, 1.0));
    const ad::Var block_v = tape.constant(std::move(blocks));
    const ad::Var tiler_v = tape.constant(std::move(tiler));
    auto spread = [&](const Tensor& indicator, ad::Var embedding) {
      ad::Var sel = ad::matmul(tape.constant(indicator), block_v);
      ad::Var tiled = ad::matmul(ones, ad::matmul(embedding, tiler_v));
      return ad::mul(sel, tiled);
    };
    ad::Var cond_v = ad::add(tape.constant(std::move(cond)), spread(present_ind, p[kMp]));
    cond_v = ad::add(cond_v, spread(absent_ind, ad::add(p[kMa], p[kZm])));

    ad::Var pre = ad::matmul(tape.constant(std::move(noisy)), p[kNoisy]);
    pre = ad::add(pre, ad::matmul(cond_v, p[kCond]));
    pre = ad::add(pre, ad::matmul(tape.constant(std::move(target)), p[kTarget]));
    pre = ad::add(pre, ad::matmul(tape.constant(std::move(step)), p[kStep]));
    pre = ad::add(pre, ad::matmul(ones, p[kBin]));
    ad::Var x = ad::activation(pre);
    x = ad::add(x, ad::activation(ad::add(ad::matmul(x, p[kW1]), ad::matmul(ones, p[kB1]))));
    x = ad::add(x, ad::activation(ad::add(ad::matmul(x, p[kW2]), ad::matmul(ones, p[kB2]))));
    ad::Var out = ad::add(ad::matmul(x, p[kWout]), ad::matmul(ones, p[kBout]));
    return ad::squared_error(out, tape.constant(std::move(eps)));
  }

  DenoiserConfig config_;
  ParameterSet params_;
};

static_assert(Denoiser<MlpDenoiser>);

// Per-model cache of step projections for t = 1..T. Read-only once built, so
// one instance can serve concurrent chains.
template <Denoiser M>
class ReverseSampler {
 public:
  ReverseSampler(const M& model, const NoiseSchedule& schedule) : model_(&model), schedule_(&schedule) {
    steps_.reserve(schedule.steps());
    for (std::size_t t = 1; t <= schedule.steps(); ++t) steps_.push_back(model.step_projection(t));
  }

  const M& model() const noexcept { return *model_; }
  const NoiseSchedule& schedule() const noexcept { return *schedule_; }

  Vec predict(const PreparedCondition& pc, std::span<const double> z_t, std::size_t t) const {
    schedule_->check_step(t);
    return model_->predict(pc, z_t, steps_[t - 1]);
  }

  // z_T ~ N(0, I), then denoise_step for t = T..1. All randomness from `rng`.
  Vec sample(const PreparedCondition& pc, Rng& rng) const {
    const std::size_t d = model_->latent_dim();
    Vec z(d);
    for (double& v : z) v = rng.normal();
    for (std::size_t t = schedule_->steps(); t >= 1; --t) {
      const Vec eps_hat = predict(pc, z, t);
      z = denoise_step(z, eps_hat, t, *schedule_, rng);
    }
    return z;
  }

  Vec sample(const ConditionSequence& c, std::uint64_t seed) const {
    Rng rng(seed);
    return sample(model_->prepare(c), rng);
  }

 private:
  const M* model_;
  const NoiseSchedule* schedule_;
  std::vector<Vec> steps_;
};

template <Denoiser M>
Vec predict_noise(const M& model, std::span<const double> z_t, const ConditionSequence& c, std::size_t t) {
  return model.predict(model.prepare(c), z_t, model.step_projection(t));
}

template <Denoiser M>
Vec sample_target(const M& model, const ConditionSequence& c, const NoiseSchedule& schedule, Rng& rng) {
  ReverseSampler<M> sampler(model, schedule);
  return sampler.sample(model.prepare(c), rng);
}

// ---------------------------------------------------------------------------
// Task losses

inline DenoisingSample interpolation_sample(const TrajectoryRecord& record, std::size_t target, std::size_t t,
                                            Vec epsilon) {
  if (!record.present(target))
    throw std::invalid_argument("interpolation loss needs ground truth at position " + std::to_string(target));
  return {build_condition(record, target, TaskMode::interpolation), *record.latents[target], t, std::move(epsilon)};
}

// Horizon k admits targets i in {6-k .. 5}.
inline DenoisingSample extrapolation_sample(const TrajectoryRecord& record, std::size_t horizon, std::size_t target,
                                            std::size_t t, Vec epsilon) {
  if (horizon < 1 || horizon > kLastPosition) throw std::out_of_range("horizon must be in 1..5");
  if (target < kGridLength - horizon || target > kLastPosition)
    throw std::out_of_range("extrapolation target inconsistent with horizon");
  if (!record.present(target))
    throw std::invalid_argument("extrapolation loss needs ground truth at position " + std::to_string(target));
  return {build_condition(record, target, TaskMode::extrapolation), *record.latents[target], t, std::move(epsilon)};
}

template <Denoiser M>
LossAndGrads loss_interpolation(const M& model, const NoiseSchedule& schedule, const TrajectoryRecord& record,
                                std::size_t target, std::size_t t, Vec epsilon) {
  const DenoisingSample s = interpolation_sample(record, target, t, std::move(epsilon));
  return model.loss_and_grads(schedule, std::span<const DenoisingSample>(&s, 1));
}

template <Denoiser M>
LossAndGrads loss_extrapolation(const M& model, const NoiseSchedule& schedule, const TrajectoryRecord& record,
                                std::size_t horizon, std::size_t target, std::size_t t, Vec epsilon) {
  const DenoisingSample s = extrapolation_sample(record, horizon, target, t, std::move(epsilon));
  return model.loss_and_grads(schedule, std::span<const DenoisingSample>(&s, 1));
}

}  // namespace trajdiff

#endif  // TRAJDIFF_DIFFUSION_HPP
