#ifndef TRAJDIFF_OPTIM_HPP
#define TRAJDIFF_OPTIM_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajdiff/errors.hpp"
#include "trajdiff/tape.hpp"
#include "trajdiff/tensor.hpp"

namespace trajdiff {

// Ordered collection of named trainable tensors.
class ParameterSet {
 public:
  void add(std::string name, Tensor value) {
    for (const auto& e : entries_)
      if (e.first == name) throw std::invalid_argument("duplicate parameter name: " + name);
    entries_.emplace_back(std::move(name), std::move(value));
  }

  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Tensor& operator[](std::size_t i) { return entries_[i].second; }
  const Tensor& operator[](std::size_t i) const { return entries_[i].second; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].first == name) return i;
    throw std::out_of_range("no parameter named " + name);
  }
  Tensor& get(const std::string& name) { return entries_[index_of(name)].second; }
  const Tensor& get(const std::string& name) const { return entries_[index_of(name)].second; }

  std::size_t scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  bool all_finite() const noexcept {
    for (const auto& e : entries_)
      if (!e.second.all_finite()) return false;
    return true;
  }

  // Puts every tensor on the tape as a trainable leaf, in order.
  std::vector<ad::Var> bind(ad::Tape& tape) const {
    std::vector<ad::Var> vars;
    vars.reserve(entries_.size());
    for (const auto& e : entries_) vars.push_back(tape.parameter(e.second));
    return vars;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.entries_ == b.entries_;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& [name, t] : entries_) {
      out[name] = {{"shape", t.shape()}, {"data", t.storage()}};
    }
    return out;
  }

  // Loads values into an already-shaped set; names and shapes must match.
  void load_json(const nlohmann::json& j) {
    if (!j.is_object()) throw DataError("parameter block must be an object");
    if (j.size() != entries_.size())
      throw DataError("parameter count mismatch: file has " + std::to_string(j.size()) +
                      ", model expects " + std::to_string(entries_.size()));
    for (auto& [name, t] : entries_) {
      if (!j.contains(name)) throw DataError("missing parameter " + name);
      const auto& e = j.at(name);
      Shape shape = e.at("shape").get<Shape>();
      if (shape != t.shape())
        throw DataError("shape mismatch for " + name + ": file " + shape_str(shape) + ", model " +
                        shape_str(t.shape()));
      std::vector<double> data = e.at("data").get<std::vector<double>>();
      if (data.size() != t.size()) throw DataError("data length mismatch for " + name);
      t = Tensor(shape, std::move(data));
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment optimizer with bias correction.
class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig config) : config_(config) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      first_.emplace_back(params[i].shape(), 0.0);
      second_.emplace_back(params[i].shape(), 0.0);
    }
  }

  std::uint64_t step_count() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return config_; }

  void step(ParameterSet& params, std::span<const Tensor> grads) {
    if (params.size() != first_.size() || grads.size() != first_.size())
      throw std::invalid_argument("optimizer: parameter count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!grads[i].same_shape(params[i]) || !first_[i].same_shape(params[i]))
        throw std::invalid_argument("optimizer: shape mismatch for " + params.name(i));
      if (!grads[i].all_finite()) throw NumericError("optimizer: non-finite gradient for " + params.name(i));
    }
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      Tensor& p = params[i];
      Tensor& m = first_[i];
      Tensor& v = second_[i];
      const Tensor& g = grads[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        p[k] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
      }
    }
  }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
};

}  // namespace trajdiff

#endif  // TRAJDIFF_OPTIM_HPP
