#ifndef TRAJDIFF_TENSOR_HPP
#define TRAJDIFF_TENSOR_HPP

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajdiff/errors.hpp"

namespace trajdiff {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major array of doubles. Every dimension is positive.
class Tensor {
 public:
  Tensor() : shape_{1, 1}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_))
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }
  static Tensor row(std::span<const double> v) {
    return Tensor({1, v.size()}, std::vector<double>(v.begin(), v.end()));
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const { return dim2().first; }
  std::size_t cols() const { return dim2().second; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  bool all_finite() const noexcept {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }
  bool is_scalar() const noexcept { return data_.size() == 1; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_size(const Shape& s) {
    if (s.empty()) throw std::invalid_argument("tensor shape must be nonempty");
    std::size_t n = 1;
    for (std::size_t d : s) {
      if (d == 0) throw std::invalid_argument("tensor dimensions must be positive: " + shape_str(s));
      n *= d;
    }
    return n;
  }

  std::pair<std::size_t, std::size_t> dim2() const {
    if (shape_.size() != 2) throw std::invalid_argument("expected a matrix, got " + shape_str(shape_));
    return {shape_[0], shape_[1]};
  }

  Shape shape_;
  std::vector<double> data_;
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

inline ConstMatMap as_eigen(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}
inline MatMap as_eigen(Tensor& t) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

inline void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

// Plain (untraced) kernels. The tape ops are built on these.
namespace kernel {

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul dimension mismatch: " + shape_str(a.shape()) + " * " +
                                shape_str(b.shape()));
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  as_eigen(out).noalias() = as_eigen(a) * as_eigen(b);
  return out;
}

// a^T b
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("matmul_tn dimension mismatch: " + shape_str(a.shape()) + " * " +
                                shape_str(b.shape()));
  Tensor out = Tensor::matrix(a.cols(), b.cols());
  as_eigen(out).noalias() = as_eigen(a).transpose() * as_eigen(b);
  return out;
}

// a b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("matmul_nt dimension mismatch: " + shape_str(a.shape()) + " * " +
                                shape_str(b.shape()));
  Tensor out = Tensor::matrix(a.rows(), b.rows());
  as_eigen(out).noalias() = as_eigen(a) * as_eigen(b).transpose();
  return out;
}

template <class F>
Tensor map(const Tensor& a, F&& f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F&& f) {
  if (a.same_shape(b)) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  if (b.is_scalar()) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[0]);
    return out;
  }
  if (a.is_scalar()) {
    Tensor out(b.shape());
    for (std::size_t i = 0; i < b.size(); ++i) out[i] = f(a[0], b[i]);
    return out;
  }
  throw std::invalid_argument("shape mismatch: " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

inline void add_inplace(Tensor& acc, const Tensor& x) {
  if (!acc.same_shape(x))
    throw std::invalid_argument("add_inplace shape mismatch: " + shape_str(acc.shape()) + " vs " +
                                shape_str(x.shape()));
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

inline double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

// Shifted squareplus: (x + sqrt(x^2 + 4)) / 2 - 1. Smooth, strictly
// increasing, ReLU-like for large |x|, zero at zero.
inline double activation(double x) noexcept { return 0.5 * (x + std::sqrt(x * x + 4.0)) - 1.0; }
inline double activation_grad(double x) noexcept { return 0.5 * (1.0 + x / std::sqrt(x * x + 4.0)); }

inline double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow.
inline double softplus(double x) noexcept {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace kernel
}  // namespace trajdiff

#endif  // TRAJDIFF_TENSOR_HPP
