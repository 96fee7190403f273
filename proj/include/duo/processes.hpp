#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "duo/categorical.hpp"
#include "duo/error.hpp"
#include "duo/normal.hpp"
#include "duo/quadrature.hpp"
#include "duo/rng.hpp"
#include "duo/schedule.hpp"

namespace duo {

enum class Prior { kUniform, kMasked };

/// Limiting distribution of the forward process. Only the uniform prior has a
/// Gaussian dual, so the masked prior is rejected.
inline Categorical make_prior(Prior prior, std::size_t K) {
  detail::require(prior == Prior::kUniform, ErrorKind::kCapability, "masked prior is not supported");
  detail::require(K >= 2, ErrorKind::kParameter, "prior needs K >= 2");
  return Categorical::uniform(K);
}

/// Gaussian latent N(mean, std^2 I).
struct GaussianLatent {
  std::vector<double> mean;
  double std = 0.0;
};

inline GaussianLatent gaussian_marginal(std::size_t x, double alpha_tilde, std::size_t K) {
  detail::require(x < K, ErrorKind::kIndex, "token out of range");
  detail::require(alpha_tilde >= 0.0 && alpha_tilde <= 1.0, ErrorKind::kDomain, "alpha~ outside [0,1]");
  GaussianLatent g{std::vector<double>(K, 0.0), sigma_tilde(alpha_tilde)};
  g.mean[x] = alpha_tilde;
  return g;
}

/// q_t(. | x) = alpha e_x + (1 - alpha) / K.
inline Categorical discrete_marginal(std::size_t x, double alpha, std::size_t K) {
  detail::require(x < K, ErrorKind::kIndex, "token " + std::to_string(x) + " out of range");
  detail::require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::kDomain, "alpha outside [0,1]");
  std::vector<double> p(K, (1.0 - alpha) / static_cast<double>(K));
  p[x] += alpha;
  return Categorical(std::move(p));
}

/// Inverse-CDF draw using one uniform. Falls back to the last index with mass
/// when rounding leaves u above the running sum.
inline std::size_t sample_categorical(const Categorical& cat, CounterRng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < cat.size(); ++i) {
    if (cat[i] <= 0.0) continue;
    acc += cat[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

/// Rate matrix of the uniform-state marginal ODE dP/dt = Q P, P a column.
///
/// Q = -(alpha' / (K alpha)) (J - K I). Columns sum to zero and off-diagonals
/// are -alpha'/(K alpha) >= 0 for a decreasing schedule.
inline Matrix transition_matrix(double alpha, double alpha_prime, std::size_t K) {
  detail::require(alpha != 0.0, ErrorKind::kSingularity, "rate matrix undefined at alpha = 0");
  detail::require(alpha > 0.0 && alpha <= 1.0, ErrorKind::kDomain, "alpha outside (0,1]");
  const double Kd = static_cast<double>(K);
  const double c = -alpha_prime / (Kd * alpha);
  Matrix Q(K, K, c);
  for (std::size_t i = 0; i < K; ++i) Q(i, i) = c * (1.0 - Kd);
  return Q;
}

/// q(z_t | z_s) = alpha_ts e_{z_s} + (1 - alpha_ts) / K.
inline Categorical transition_kernel(std::size_t z_s, double alpha_ts, std::size_t K) {
  return discrete_marginal(z_s, alpha_ts, K);
}

/// Reverse posterior q(z_s | z_t, x) with x replaced by the soft prediction x_hat.
///
/// Numerator over z_s:
///   K a_t x_hat[z_t] e_{z_t} + (a_{t|s} - a_t) e_{z_t} + (a_s - a_t) x_hat
///   + (1 - a_{t|s})(1 - a_s) / K,
/// denominator K a_t x_hat[z_t] + 1 - a_t; the ratio sums to one exactly.
inline Categorical reverse_posterior(std::size_t z_t, const Categorical& x_hat, double alpha_s, double alpha_t) {
  const std::size_t K = x_hat.size();
  detail::require(z_t < K, ErrorKind::kIndex, "z_t out of range");
  detail::require(alpha_s > 0.0 && alpha_s <= 1.0, ErrorKind::kDomain, "alpha_s outside (0,1]");
  detail::require(alpha_t >= 0.0, ErrorKind::kDomain, "alpha_t negative");
  detail::require(alpha_t <= alpha_s, ErrorKind::kOrdering, "alpha_t > alpha_s");
  const double Kd = static_cast<double>(K);
  const double a_ts = alpha_t / alpha_s;
  const double denom = Kd * alpha_t * x_hat[z_t] + 1.0 - alpha_t;
  detail::require(denom > 0.0, ErrorKind::kOrdering, "reverse posterior denominator vanished (alpha_t = 1, x_hat[z_t] = 0)");
  const double base = (1.0 - a_ts) * (1.0 - alpha_s) / Kd;
  std::vector<double> num(K);
  for (std::size_t k = 0; k < K; ++k) num[k] = std::fmax(0.0, (alpha_s - alpha_t) * x_hat[k] + base);
  num[z_t] += Kd * alpha_t * x_hat[z_t] + (a_ts - alpha_t);
  return Categorical::normalized(std::move(num));
}

/// w = alpha~ e_x + sigma~ eps.
inline std::vector<double> gaussian_forward_sample(std::size_t x, double alpha_tilde, std::size_t K, CounterRng& rng) {
  detail::require(x < K, ErrorKind::kIndex, "token out of range");
  detail::require(alpha_tilde >= 0.0 && alpha_tilde <= 1.0, ErrorKind::kDomain, "alpha~ outside [0,1]");
  const double s = sigma_tilde(alpha_tilde);
  std::vector<double> w(K);
  for (std::size_t k = 0; k < K; ++k) w[k] = s * rng.normal();
  if (s == 0.0) std::fill(w.begin(), w.end(), 0.0);
  w[x] += alpha_tilde;
  return w;
}

/// One DDIM step from alpha~_t to alpha~_s with x_hat as the mean vector.
inline std::vector<double> ddim_step(const std::vector<double>& w_t, const std::vector<double>& x_hat,
                                     double alpha_tilde_s, double alpha_tilde_t) {
  detail::require(w_t.size() == x_hat.size(), ErrorKind::kShape, "ddim_step size mismatch");
  detail::require(alpha_tilde_t <= alpha_tilde_s, ErrorKind::kOrdering, "ddim_step needs alpha~_t <= alpha~_s");
  const double sig_t = sigma_tilde(alpha_tilde_t);
  detail::require(sig_t > 0.0, ErrorKind::kSingularity, "ddim_step undefined at sigma~_t = 0");
  if (alpha_tilde_s == alpha_tilde_t) return w_t;
  const double sig_s = sigma_tilde(alpha_tilde_s);
  std::vector<double> out(w_t.size());
  for (std::size_t k = 0; k < w_t.size(); ++k) {
    const double eps = (w_t[k] - alpha_tilde_t * x_hat[k]) / sig_t;
    out[k] = alpha_tilde_s * x_hat[k] + sig_s * eps;
  }
  return out;
}

/// Law of argmax(w) for w ~ N(mean, sigma^2 I).
///
/// With u = (l - mean_i)/sigma, P(i) = int phi(u) prod_{j != i} Phi(u + d_ij) du
/// where d_ij = (mean_i - mean_j)/sigma, integrated in log domain.
inline Categorical argmax_pushforward(const std::vector<double>& mean, double sigma,
                                      double rel_tol = kDefaultTransformTol) {
  detail::require(sigma > 0.0, ErrorKind::kParameter, "argmax_pushforward needs sigma > 0");
  detail::require(rel_tol > 0.0, ErrorKind::kParameter, "rel_tol must be positive");
  const std::size_t K = mean.size();
  detail::require(K >= 1, ErrorKind::kShape, "empty mean");
  if (K == 1) return Categorical::one_hot(0, 1);
  std::vector<double> probs(K);
  std::vector<double> d(K);
  quad::Options opt;
  opt.rel_tol = rel_tol;
  for (std::size_t i = 0; i < K; ++i) {
    double lag = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      d[j] = (mean[i] - mean[j]) / sigma;
      if (j != i) lag = std::fmax(lag, -d[j]);
    }
    const double hi_q = normal::upper_quantile(1.0 / static_cast<double>(K));
    probs[i] = quad::integrate(
        [&](double u) {
          double acc = normal::log_pdf(u);
          for (std::size_t j = 0; j < K; ++j) {
            if (j != i) acc += normal::log_cdf(u + d[j]);
          }
          return std::exp(acc);
        },
        -12.0, std::fmax(lag, hi_q) + 12.0, opt, "argmax pushforward quadrature did not converge");
  }
  double sum = 0.0;
  for (double p : probs) sum += p;
  const double slack = std::fmax(1e-6, 100.0 * rel_tol);
  if (std::fabs(sum - 1.0) > slack) throw NumericError("argmax pushforward mass off by " + std::to_string(sum - 1.0), std::fabs(sum - 1.0));
  for (double& p : probs) p = std::fmax(0.0, p);
  return Categorical::normalized(std::move(probs));
}

}  // namespace duo
