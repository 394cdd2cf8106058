// Shared helpers for the unit tests and the acceptance runner.
#ifndef TRAJDIFF_TESTS_SUPPORT_HPP
#define TRAJDIFF_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "trajdiff/trajdiff.hpp"

namespace trajdiff::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<param>[index]"
};

// Central differences at `count` coordinates drawn uniformly over all scalars
// of the parameter set. Relative error is |a - n| / max(|a|, |n|, floor).
template <class LossFn>
GradCheck finite_difference_check(ParameterSet& params, const std::vector<Tensor>& analytic, LossFn&& loss,
                                  std::size_t count, std::uint64_t seed, double h = 1e-5, double floor = 1e-6) {
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].size(); ++i) coords.emplace_back(p, i);
  std::mt19937_64 rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(std::min(count, coords.size()));

  GradCheck out;
  for (auto [p, i] : coords) {
    double& w = params[p][i];
    const double saved = w;
    w = saved + h;
    const double up = loss();
    w = saved - h;
    const double down = loss();
    w = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[p][i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst = params.name(p) + "[" + std::to_string(i) + "]";
    }
    ++out.coordinates;
  }
  return out;
}

inline Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.data()) v = n(rng);
  return t;
}

// Reference triple loop.
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("trajdiff_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Silences the library log for the lifetime of the guard and counts warnings.
class LogCapture {
 public:
  LogCapture() {
    old_ = set_log_sink([this](LogLevel level, std::string_view msg) {
      if (level == LogLevel::warning) {
        ++warnings;
        last = std::string(msg);
      }
    });
  }
  ~LogCapture() { set_log_sink(std::move(old_)); }
  LogCapture(const LogCapture&) = delete;
  LogCapture& operator=(const LogCapture&) = delete;

  std::size_t warnings = 0;
  std::string last;

 private:
  LogSink old_;
};

// Small cohort used across module tests.
inline Cohort toy_cohort(std::size_t n, std::uint64_t seed) {
  CohortConfig cfg = default_cohort_config(seed);
  cfg.n_patients = n;
  return generate_cohort(cfg);
}

}  // namespace trajdiff::testing

#endif  // TRAJDIFF_TESTS_SUPPORT_HPP
