#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "duo/error.hpp"

namespace duo {

using Token = std::uint32_t;
using TokenSeq = std::vector<Token>;

inline constexpr double kSimplexTol = 1e-10;

/// Probability vector over K classes.
class Categorical {
 public:
  Categorical() = default;

  /// Validates nonnegativity and unit sum within `tol`.
  explicit Categorical(std::vector<double> probs, double tol = kSimplexTol) : p_(std::move(probs)) {
    detail::require(!p_.empty(), ErrorKind::kShape, "categorical needs K >= 1");
    double sum = 0.0;
    for (double v : p_) {
      detail::require(std::isfinite(v) && v >= 0.0, ErrorKind::kDomain, "categorical entry negative or non-finite");
      sum += v;
    }
    detail::require(std::fabs(sum - 1.0) <= tol, ErrorKind::kDomain,
                    "categorical entries sum to " + std::to_string(sum));
  }

  /// Divides by the sum; the input must have a positive finite sum.
  static Categorical normalized(std::vector<double> weights) {
    double sum = 0.0;
    for (double v : weights) {
      detail::require(std::isfinite(v) && v >= 0.0, ErrorKind::kDomain, "weight negative or non-finite");
      sum += v;
    }
    detail::require(sum > 0.0 && std::isfinite(sum), ErrorKind::kDomain, "weights have no mass");
    for (double& v : weights) v /= sum;
    return Categorical(std::move(weights));
  }

  static Categorical uniform(std::size_t K) { return Categorical(std::vector<double>(K, 1.0 / static_cast<double>(K))); }

  static Categorical one_hot(std::size_t x, std::size_t K) {
    detail::require(x < K, ErrorKind::kIndex, "one-hot index out of range");
    std::vector<double> p(K, 0.0);
    p[x] = 1.0;
    return Categorical(std::move(p));
  }

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  const std::vector<double>& probs() const { return p_; }
  auto begin() const { return p_.begin(); }
  auto end() const { return p_.end(); }

  bool operator==(const Categorical&) const = default;

 private:
  std::vector<double> p_;
};

/// Lowest index of the maximum entry.
template <class Range>
std::size_t argmax(const Range& v) {
  std::size_t best = 0;
  std::size_t i = 0;
  double best_v = 0.0;
  for (double x : v) {
    if (i == 0 || x > best_v) {
      best = i;
      best_v = x;
    }
    ++i;
  }
  return best;
}

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }

  std::vector<double> multiply(const std::vector<double>& v) const {
    detail::require(v.size() == cols, ErrorKind::kShape, "matrix-vector size mismatch");
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) acc += (*this)(r, c) * v[c];
      out[r] = acc;
    }
    return out;
  }
};

/// In-place softmax with max subtraction.
inline void softmax_inplace(double* v, std::size_t n) {
  double mx = v[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::fmax(mx, v[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::exp(v[i] - mx);
    sum += v[i];
  }
  for (std::size_t i = 0; i < n; ++i) v[i] /= sum;
}

inline void check_tokens(const TokenSeq& seq, std::size_t K) {
  for (Token z : seq) detail::require(z < K, ErrorKind::kIndex, "token id " + std::to_string(z) + " >= K");
}

}  // namespace duo
