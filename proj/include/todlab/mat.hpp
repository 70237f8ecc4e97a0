#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <vector>

#include "todlab/common.hpp"
#include "todlab/rng.hpp"

namespace todlab {

// Dense row-major matrix. The library owns the storage; Eigen maps provide
// the kernels. Scalar S is float on the training path and double in the
// numerical oracles, so everything downstream templates on it.
// Storage is pinned to Eigen's SIMD alignment: the vectorised kernels peel
// loop heads and tails by address, so the base alignment has to be a fixed
// property of the data or summation order (and with it the last bits of
// every result) would vary with heap layout from run to run.
template <class S>
class Mat {
 public:
  using EigenMap = Eigen::Map<
      Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstEigenMap = Eigen::Map<
      const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Mat() = default;
  Mat(int rows, int cols) : rows_(rows), cols_(cols), d_(size_t(rows) * cols, S(0)) {
    check(rows >= 0 && cols >= 0, "Mat: negative dimension");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return d_.size(); }
  bool empty() const { return d_.empty(); }

  S* data() { return d_.data(); }
  const S* data() const { return d_.data(); }

  S& operator()(int r, int c) { return d_[size_t(r) * cols_ + c]; }
  S operator()(int r, int c) const { return d_[size_t(r) * cols_ + c]; }

  S* row_ptr(int r) { return d_.data() + size_t(r) * cols_; }
  const S* row_ptr(int r) const { return d_.data() + size_t(r) * cols_; }

  EigenMap map() { return EigenMap(d_.data(), rows_, cols_); }
  ConstEigenMap map() const { return ConstEigenMap(d_.data(), rows_, cols_); }

  void set_zero() { std::fill(d_.begin(), d_.end(), S(0)); }
  void fill(S v) { std::fill(d_.begin(), d_.end(), v); }

  void resize(int rows, int cols) {
    rows_ = rows;
    cols_ = cols;
    d_.assign(size_t(rows) * cols, S(0));
  }

  bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (S v : d_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  static Mat gaussian(int rows, int cols, double stddev, Rng& rng) {
    Mat m(rows, cols);
    for (auto& v : m.d_) v = S(rng.normal() * stddev);
    return m;
  }

  static Mat ones(int rows, int cols) {
    Mat m(rows, cols);
    m.fill(S(1));
    return m;
  }

  template <class T>
  Mat<T> cast() const {
    Mat<T> m(rows_, cols_);
    for (std::size_t i = 0; i < d_.size(); ++i) m.data()[i] = T(d_[i]);
    return m;
  }

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<S, Eigen::aligned_allocator<S>> d_;
};

template <class S>
S l2_norm(const Mat<S>& a) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a.data()[i]) * double(a.data()[i]);
  return S(std::sqrt(s));
}

template <class S>
S l2_distance(const Mat<S>& a, const Mat<S>& b) {
  check(a.same_shape(b), "l2_distance: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a.data()[i]) - double(b.data()[i]);
    s += d * d;
  }
  return S(std::sqrt(s));
}

// Mean of elementwise squared differences; the probe metric. Distinct from
// l2_distance on purpose: distillation uses the unsquared norm.
template <class S>
double mse_distance(const Mat<S>& a, const Mat<S>& b) {
  check(a.same_shape(b) && a.size() > 0, "mse_distance: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a.data()[i]) - double(b.data()[i]);
    s += d * d;
  }
  return s / double(a.size());
}

}  // namespace todlab
