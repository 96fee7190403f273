#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "duo/error.hpp"
#include "duo/io.hpp"
#include "duo/normal.hpp"
#include "duo/quadrature.hpp"

namespace duo {

inline constexpr double kDefaultTransformTol = 1e-8;
inline constexpr double kDerivativeStep = 1e-5;
inline constexpr double kEndpointEps = 1e-6;
inline constexpr std::size_t kDefaultTableSize = 100000;

/// sigma~ = sqrt(1 - alpha~^2), the Gaussian noise scale.
inline double sigma_tilde(double alpha_tilde) { return std::sqrt(std::fmax(0.0, 1.0 - alpha_tilde * alpha_tilde)); }

/// Signal-to-noise ratio nu = alpha~^2 / (1 - alpha~^2).
inline double snr(double alpha_tilde) { return alpha_tilde * alpha_tilde / (1.0 - alpha_tilde * alpha_tilde); }

/// d nu / dt for the linear Gaussian schedule alpha~ = 1 - t.
inline double snr_time_derivative(double t) {
  const double a = 1.0 - t;
  const double s2 = 1.0 - a * a;
  return -2.0 * a / (s2 * s2);
}

namespace detail {

// Mean offset of the data coordinate in units of sigma~; valid for a in (-1, 1).
inline double standardized_signal(double a) { return a / std::sqrt(1.0 - a * a); }

// The mass of phi(z - m) Phi^{K-1}(z) sits near max(m, Phi^-1(1 - 1/K)).
inline double winner_center(double m, double K) { return std::fmax(m, normal::upper_quantile(1.0 / K)); }

inline double winner_log_integrand(double z, double m, double km1) {
  return normal::log_pdf(z - m) + km1 * normal::log_cdf(z);
}

// K/(K-1) [ int phi(z - m) Phi^{K-1}(z) dz - 1/K ], unclamped, for a in (-1, 1).
inline double transform_raw(double a, std::size_t K, double rel_tol) {
  const double Kd = static_cast<double>(K);
  const double m = standardized_signal(a);
  const double c = winner_center(m, Kd);
  const double km1 = Kd - 1.0;
  quad::Options opt;
  opt.rel_tol = rel_tol;
  const double integral = quad::integrate([&](double z) { return std::exp(winner_log_integrand(z, m, km1)); },
                                          c - 12.0, c + 12.0, opt, "transform quadrature did not converge");
  return Kd / km1 * (integral - 1.0 / Kd);
}

}  // namespace detail

/// Diffusion transformation operator: probability mass shift onto the data
/// index under argmax of N(alpha~ e_x, sigma~^2 I), rescaled so that
/// argmax-marginals equal the uniform-state marginals with alpha = T(alpha~).
inline double transform(double alpha_tilde, std::size_t K, double rel_tol = kDefaultTransformTol) {
  detail::require(rel_tol > 0.0, ErrorKind::kParameter, "transform rel_tol must be positive");
  detail::require(K >= 2, ErrorKind::kParameter, "transform needs K >= 2");
  detail::require(alpha_tilde >= 0.0 && alpha_tilde <= 1.0, ErrorKind::kDomain, "transform needs alpha~ in [0,1]");
  if (alpha_tilde == 1.0) return 1.0;
  if (alpha_tilde == 0.0) return 0.0;
  return std::clamp(detail::transform_raw(alpha_tilde, K, rel_tol), 0.0, 1.0);
}

/// dT/d alpha~ by central difference with step h.
///
/// Both shifted integrals are taken in one quadrature pass over
/// [phi(z - m+) - phi(z - m-)] Phi^{K-1}(z), so the difference sees a shared
/// mesh. Near alpha~ = 1 the step shrinks to (1 - alpha~) / 2.
inline double transform_derivative(double alpha_tilde, std::size_t K, double rel_tol = kDefaultTransformTol,
                                   double h = kDerivativeStep) {
  detail::require(rel_tol > 0.0, ErrorKind::kParameter, "transform_derivative rel_tol must be positive");
  detail::require(K >= 2, ErrorKind::kParameter, "transform_derivative needs K >= 2");
  detail::require(alpha_tilde > kEndpointEps && alpha_tilde < 1.0 - kEndpointEps, ErrorKind::kEndpoint,
                  "alpha~ within 1e-6 of an endpoint; use one-sided handling");
  const double step = std::fmin(h, 0.5 * (1.0 - alpha_tilde));
  const double Kd = static_cast<double>(K);
  const double km1 = Kd - 1.0;
  const double m_hi = detail::standardized_signal(alpha_tilde + step);
  const double m_lo = detail::standardized_signal(alpha_tilde - step);
  const double lo = detail::winner_center(m_lo, Kd) - 12.0;
  const double hi = detail::winner_center(m_hi, Kd) + 12.0;
  quad::Options opt;
  opt.rel_tol = rel_tol;
  const double diff = quad::integrate(
      [&](double z) {
        const double tail = km1 * normal::log_cdf(z);
        return std::exp(normal::log_pdf(z - m_hi) + tail) - std::exp(normal::log_pdf(z - m_lo) + tail);
      },
      lo, hi, opt, "transform derivative quadrature did not converge");
  return Kd / km1 * diff / (2.0 * step);
}

/// Cached monotone pairs (alpha~, T(alpha~)) on a grid spanning [0, 1].
class TransformTable {
 public:
  static constexpr const char* kMagic = "DUOTBL1";

  TransformTable(std::size_t vocab_size, std::vector<double> grid, std::vector<double> values, double rel_tol)
      : K_(vocab_size), grid_(std::move(grid)), values_(std::move(values)), rel_tol_(rel_tol) {
    validate();
  }

  std::size_t vocab_size() const { return K_; }
  std::size_t size() const { return grid_.size(); }
  double rel_tol() const { return rel_tol_; }
  const std::vector<double>& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }

  /// Piecewise-linear interpolation.
  double lookup(double alpha_tilde) const {
    detail::require(alpha_tilde >= 0.0 && alpha_tilde <= 1.0, ErrorKind::kDomain, "lookup needs alpha~ in [0,1]");
    const auto it = std::upper_bound(grid_.begin(), grid_.end(), alpha_tilde);
    if (it == grid_.end()) return values_.back();
    const std::size_t hi = static_cast<std::size_t>(it - grid_.begin());
    if (hi == 0) return values_.front();
    const std::size_t lo = hi - 1;
    if (grid_[lo] == alpha_tilde) return values_[lo];
    const double w = (alpha_tilde - grid_[lo]) / (grid_[hi] - grid_[lo]);
    return values_[lo] + w * (values_[hi] - values_[lo]);
  }

  /// Smallest alpha~ whose interpolated value reaches `target`.
  double invert(double target) const {
    detail::require(target >= 0.0 && target <= 1.0, ErrorKind::kDomain, "invert needs T in [0,1]");
    if (target <= values_.front()) return grid_.front();
    if (target >= values_.back()) return grid_.back();
    const auto it = std::lower_bound(values_.begin(), values_.end(), target);
    const std::size_t hi = static_cast<std::size_t>(it - values_.begin());
    const std::size_t lo = hi - 1;
    const double dv = values_[hi] - values_[lo];
    if (dv <= 0.0) return grid_[hi];
    return grid_[lo] + (target - values_[lo]) / dv * (grid_[hi] - grid_[lo]);
  }

  /// Finite-difference slope of the interpolant, one-sided at the ends.
  double slope(double alpha_tilde, double h = kDerivativeStep) const {
    const double step = std::fmax(h, 1.0 / static_cast<double>(size() - 1));
    const double lo = std::fmax(0.0, alpha_tilde - step);
    const double hi = std::fmin(1.0, alpha_tilde + step);
    return (lookup(hi) - lookup(lo)) / (hi - lo);
  }

  void save(const std::string& path) const {
    auto os = io::open_out(path, true);
    io::write_magic(os, kMagic);
    io::write_u64(os, K_);
    io::write_u64(os, grid_.size());
    io::write_f64(os, rel_tol_);
    for (double g : grid_) io::write_f64(os, g);
    for (double v : values_) io::write_f64(os, v);
    if (!os) throw Error(ErrorKind::kIo, "failed writing table: " + path);
  }

  static TransformTable load(const std::string& path) {
    auto is = io::open_in(path, true);
    io::expect_magic(is, kMagic);
    const std::uint64_t K = io::read_u64(is);
    const std::uint64_t N = io::read_u64(is);
    const double tol = io::read_f64(is);
    detail::require(N >= 2 && N <= (std::uint64_t{1} << 32), ErrorKind::kState, "table size out of range");
    std::vector<double> grid(N), values(N);
    for (auto& g : grid) g = io::read_f64(is);
    for (auto& v : values) v = io::read_f64(is);
    return TransformTable(static_cast<std::size_t>(K), std::move(grid), std::move(values), tol);
  }

 private:
  void validate() const {
    detail::require(K_ >= 2, ErrorKind::kState, "table vocab size must be >= 2");
    detail::require(grid_.size() >= 2 && grid_.size() == values_.size(), ErrorKind::kState,
                    "table needs >= 2 matching grid/value entries");
    detail::require(rel_tol_ > 0.0, ErrorKind::kState, "table rel_tol must be positive");
    detail::require(grid_.front() == 0.0 && grid_.back() == 1.0, ErrorKind::kState, "table grid must span [0,1]");
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      detail::require(values_[i] >= 0.0 && values_[i] <= 1.0, ErrorKind::kState, "table value outside [0,1]");
      if (i > 0) {
        detail::require(grid_[i] > grid_[i - 1], ErrorKind::kState, "table grid not strictly increasing");
        detail::require(values_[i] >= values_[i - 1], ErrorKind::kState,
                        "table values not monotone at index " + std::to_string(i));
      }
    }
    detail::require(std::fabs(values_.front()) <= 1e-6 && std::fabs(values_.back() - 1.0) <= 1e-6, ErrorKind::kState,
                    "table endpoints must be 0 and 1");
  }

  std::size_t K_;
  std::vector<double> grid_;
  std::vector<double> values_;
  double rel_tol_;
};

/// Uniform alpha~ grid on [0, 1] with values from transform().
///
/// Workers take contiguous index blocks; each slot is written by exactly one
/// worker so the result does not depend on `jobs`. Quadrature noise can leave
/// sub-tolerance dips; those are flattened by a running max, and a dip larger
/// than 10 rel_tol is reported as a numeric error.
inline TransformTable build_table(std::size_t K, std::size_t N, double rel_tol = kDefaultTransformTol,
                                  unsigned jobs = 0) {
  detail::require(N >= 2, ErrorKind::kParameter, "build_table needs N >= 2");
  detail::require(K >= 2, ErrorKind::kParameter, "build_table needs K >= 2");
  detail::require(rel_tol > 0.0, ErrorKind::kParameter, "build_table rel_tol must be positive");
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, N));

  std::vector<double> grid(N), values(N);
  const double step = 1.0 / static_cast<double>(N - 1);
  for (std::size_t i = 0; i < N; ++i) grid[i] = (i + 1 == N) ? 1.0 : static_cast<double>(i) * step;

  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        values[i] = transform(grid[i], K, rel_tol);
      } catch (const NumericError& e) {
        std::lock_guard lock(failure_mutex);
        if (!failure) {
          failure = std::make_exception_ptr(
              NumericError("table grid point " + std::to_string(i) + " (alpha~=" + std::to_string(grid[i]) + ")",
                           e.achieved_error()));
        }
        return;
      }
    }
  };
  if (jobs <= 1) {
    work(0, N);
  } else {
    std::vector<std::thread> threads;
    const std::size_t block = (N + jobs - 1) / jobs;
    for (unsigned j = 0; j < jobs; ++j) {
      const std::size_t b = j * block;
      const std::size_t e = std::min(N, b + block);
      if (b < e) threads.emplace_back(work, b, e);
    }
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t i = 1; i < N; ++i) {
    if (values[i] < values[i - 1]) {
      const double dip = values[i - 1] - values[i];
      if (dip > 10.0 * rel_tol) {
        throw NumericError("table not monotone at grid point " + std::to_string(i), dip);
      }
      values[i] = values[i - 1];
    }
  }
  return TransformTable(K, std::move(grid), std::move(values), rel_tol);
}

enum class ScheduleKind { kLinearDiscrete, kLinearGaussian, kViaTransform };

struct AlphaEval {
  double alpha;
  double alpha_prime;
};

/// Continuous-time noise schedule. Linear kinds are alpha(t) = 1 - t; the
/// via-transform kind is alpha(t) = T(alpha~(t)) with alpha~(t) = 1 - t, read
/// from a cached table, and its derivative by the chain rule.
class Schedule {
 public:
  static Schedule linear_discrete() { return Schedule(ScheduleKind::kLinearDiscrete, nullptr); }
  static Schedule linear_gaussian() { return Schedule(ScheduleKind::kLinearGaussian, nullptr); }
  static Schedule via_transform(std::shared_ptr<const TransformTable> table) {
    detail::require(table != nullptr, ErrorKind::kParameter, "via-transform schedule needs a table");
    return Schedule(ScheduleKind::kViaTransform, std::move(table));
  }

  ScheduleKind kind() const { return kind_; }
  bool is_discrete() const { return kind_ != ScheduleKind::kLinearGaussian; }
  const TransformTable* table() const { return table_.get(); }
  std::shared_ptr<const TransformTable> shared_table() const { return table_; }
  double domain_lo() const { return 0.0; }
  double domain_hi() const { return 1.0; }

  AlphaEval eval(double t) const {
    detail::require(t >= domain_lo() && t <= domain_hi(), ErrorKind::kDomain,
                    "time " + std::to_string(t) + " outside schedule domain");
    if (kind_ != ScheduleKind::kViaTransform) return {1.0 - t, -1.0};
    const double a = 1.0 - t;
    const double alpha = table_->lookup(a);
    double dT = 0.0;
    if (a > kEndpointEps && a < 1.0 - kEndpointEps) {
      dT = transform_derivative(a, table_->vocab_size(), table_->rel_tol());
    } else {
      dT = table_->slope(a);
    }
    return {alpha, -dT};
  }

  double alpha(double t) const { return eval(t).alpha; }

 private:
  Schedule(ScheduleKind kind, std::shared_ptr<const TransformTable> table) : kind_(kind), table_(std::move(table)) {}

  ScheduleKind kind_;
  std::shared_ptr<const TransformTable> table_;
};

inline AlphaEval eval_alpha(const Schedule& schedule, double t) { return schedule.eval(t); }

}  // namespace duo
