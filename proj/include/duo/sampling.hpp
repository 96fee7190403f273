#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "duo/categorical.hpp"
#include "duo/error.hpp"
#include "duo/io.hpp"
#include "duo/models.hpp"
#include "duo/processes.hpp"
#include "duo/rng.hpp"
#include "duo/schedule.hpp"
#include "duo/seqdist.hpp"

namespace duo {

/// Ancestral sampling on the grid t_i = i/T from uniform noise at t = 1.
/// Each step draws z_s from the reverse posterior with x_hat = denoiser(z_t, t);
/// with greedy_tail the last step (s = 0) takes the posterior argmax instead.
inline TokenSeq ancestral_generate(const Denoiser& denoiser, std::size_t K, std::size_t L, std::size_t T,
                                   bool greedy_tail, CounterRng& rng,
                                   const Schedule& schedule = Schedule::linear_discrete()) {
  detail::require(T >= 1, ErrorKind::kParameter, "ancestral_generate needs T >= 1");
  detail::require(schedule.is_discrete(), ErrorKind::kParameter, "ancestral_generate needs a discrete schedule");
  detail::require(denoiser.vocab_size() == K, ErrorKind::kShape, "denoiser vocab size mismatch");
  const Categorical prior = make_prior(Prior::kUniform, K);
  TokenSeq z(L);
  for (auto& v : z) v = static_cast<Token>(sample_categorical(prior, rng));
  const double Td = static_cast<double>(T);
  for (std::size_t i = T; i >= 1; --i) {
    const double t = static_cast<double>(i) / Td;
    const double s = static_cast<double>(i - 1) / Td;
    const double a_t = schedule.alpha(t);
    const double a_s = schedule.alpha(s);
    const Matrix x_hat = denoiser.eval_tokens(z, t, a_t);
    const bool greedy = greedy_tail && i == 1;
    for (std::size_t l = 0; l < L; ++l) {
      const Categorical row(std::vector<double>(x_hat.row(l), x_hat.row(l) + K), 1e-8);
      const Categorical post = reverse_posterior(z[l], row, a_s, a_t);
      z[l] = static_cast<Token>(greedy ? argmax(post) : sample_categorical(post, rng));
    }
  }
  return z;
}

/// Batch generation; sample j uses substream j of `rng`, so the result does
/// not depend on how samples are scheduled.
inline std::vector<TokenSeq> ancestral_generate_batch(const Denoiser& denoiser, std::size_t K, std::size_t L,
                                                      std::size_t T, bool greedy_tail, std::size_t n,
                                                      const CounterRng& rng,
                                                      const Schedule& schedule = Schedule::linear_discrete()) {
  std::vector<TokenSeq> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    CounterRng sub = rng.substream(j);
    out[j] = ancestral_generate(denoiser, K, L, T, greedy_tail, sub, schedule);
  }
  return out;
}

/// Exact law over K^L sequences of ancestral_generate, by propagating the
/// state distribution through each step's product-of-posteriors kernel.
inline std::vector<double> ancestral_law(const Denoiser& denoiser, std::size_t K, std::size_t L, std::size_t T,
                                         bool greedy_tail,
                                         const Schedule& schedule = Schedule::linear_discrete()) {
  detail::require(T >= 1, ErrorKind::kParameter, "ancestral_law needs T >= 1");
  const std::size_t space = sequence_space_size(K, L);
  detail::require(space <= 4096, ErrorKind::kSize, "ancestral_law needs K^L <= 4096");
  std::vector<double> law(space, 1.0 / static_cast<double>(space));
  std::vector<TokenSeq> states(space, TokenSeq(L));
  for (std::size_t idx = 0; idx < space; ++idx) {
    std::size_t r = idx;
    for (std::size_t l = L; l-- > 0;) {
      states[idx][l] = static_cast<Token>(r % K);
      r /= K;
    }
  }
  const double Td = static_cast<double>(T);
  for (std::size_t i = T; i >= 1; --i) {
    const double t = static_cast<double>(i) / Td;
    const double s = static_cast<double>(i - 1) / Td;
    const double a_t = schedule.alpha(t);
    const double a_s = schedule.alpha(s);
    std::vector<double> next(space, 0.0);
    for (std::size_t idx = 0; idx < space; ++idx) {
      if (law[idx] == 0.0) continue;
      const TokenSeq& z = states[idx];
      const Matrix x_hat = denoiser.eval_tokens(z, t, a_t);
      std::vector<std::vector<double>> post(L);
      for (std::size_t l = 0; l < L; ++l) {
        const Categorical row(std::vector<double>(x_hat.row(l), x_hat.row(l) + K), 1e-8);
        post[l] = reverse_posterior(z[l], row, a_s, a_t).probs();
        if (greedy_tail && i == 1) post[l] = Categorical::one_hot(argmax(post[l]), K).probs();
      }
      for (std::size_t jdx = 0; jdx < space; ++jdx) {
        double p = law[idx];
        for (std::size_t l = 0; l < L && p > 0.0; ++l) p *= post[l][states[jdx][l]];
        next[jdx] += p;
      }
    }
    law = std::move(next);
  }
  return law;
}

/// argmax(alpha~ e_x + sigma~ eps) with alpha~ = 1 - t.
inline Token ddt_token(std::size_t x, const double* eps, std::size_t K, double t) {
  const double a = 1.0 - t;
  const double s = sigma_tilde(a);
  std::size_t best = 0;
  double best_v = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double v = s * eps[k] + (k == x ? a : 0.0);
    if (k == 0 || v > best_v) {
      best = k;
      best_v = v;
    }
  }
  return static_cast<Token>(best);
}

inline TokenSeq ddt_state(const TokenSeq& x, const Matrix& eps, double t) {
  detail::require(eps.rows == x.size(), ErrorKind::kShape, "eps rows must match sequence length");
  detail::require(t >= 0.0 && t <= 1.0, ErrorKind::kDomain, "time outside [0,1]");
  TokenSeq z(x.size());
  for (std::size_t l = 0; l < x.size(); ++l) {
    detail::require(x[l] < eps.cols, ErrorKind::kIndex, "token out of range");
    z[l] = ddt_token(x[l], eps.row(l), eps.cols, t);
  }
  return z;
}

struct DdtPair {
  TokenSeq z_s;
  TokenSeq z_t;
  double s = 0.0;
  double t = 0.0;
};

/// Adjacent DDT states at s = max(t - delta, 0) and t from shared noise.
inline DdtPair ddt_pair(const TokenSeq& x, const Matrix& eps, double t, double delta) {
  detail::require(delta >= 0.0, ErrorKind::kParameter, "delta must be >= 0");
  const double s = std::fmax(t - delta, 0.0);
  return {ddt_state(x, eps, s), ddt_state(x, eps, t), s, t};
}

/// Change point of the DDT token: c = max_{j != x} eps_j - eps_x, and for
/// c > 0 the token leaves x when alpha~ drops below c / sqrt(1 + c^2).
inline double flip_time(std::size_t x, const std::vector<double>& eps) {
  detail::require(x < eps.size(), ErrorKind::kIndex, "token out of range");
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < eps.size(); ++j) {
    if (j != x) best = std::fmax(best, eps[j]);
  }
  const double c = best - eps[x];
  if (!(c > 0.0)) return 1.0;
  return 1.0 - c / std::sqrt(1.0 + c * c);
}

struct Trajectory {
  std::vector<double> times;  // decreasing
  std::vector<TokenSeq> states;
};

/// DDT states on the grid t_i = 1 - i/(n-1), i = 0..n-1.
inline Trajectory ddt_trajectory(const TokenSeq& x, const Matrix& eps, std::size_t n_grid) {
  detail::require(n_grid >= 2, ErrorKind::kParameter, "trajectory grid needs >= 2 points");
  Trajectory tr;
  for (std::size_t i = 0; i < n_grid; ++i) {
    const double t = (i + 1 == n_grid) ? 0.0 : 1.0 - static_cast<double>(i) / static_cast<double>(n_grid - 1);
    tr.times.push_back(t);
    tr.states.push_back(ddt_state(x, eps, t));
  }
  return tr;
}

struct StepEstimate {
  Categorical dist;
  std::size_t accepted = 0;
};

/// Monte Carlo estimate of the marginal-preserving reverse kernel for one token.
///
/// Draws w_t ~ N(alpha~_t e_x, sigma~_t^2 I), keeps draws with argmax = z_t,
/// moves each by a DDIM step with the optimal denoiser onehot(x) and returns
/// the empirical law of argmax(w_s).
inline StepEstimate marginal_preserving_step(std::size_t z_t, std::size_t x_data, const TransformTable& table,
                                             double alpha_tilde_s, double alpha_tilde_t, std::size_t n_mc,
                                             CounterRng& rng) {
  const std::size_t K = table.vocab_size();
  detail::require(z_t < K && x_data < K, ErrorKind::kIndex, "token out of range");
  detail::require(alpha_tilde_t <= alpha_tilde_s, ErrorKind::kOrdering, "needs alpha~_t <= alpha~_s");
  detail::require(alpha_tilde_t < 1.0, ErrorKind::kSingularity, "alpha~_t = 1 has no Gaussian noise to invert");
  const std::vector<double> x_hat = Categorical::one_hot(x_data, K).probs();
  std::vector<double> counts(K, 0.0);
  std::size_t accepted = 0;
  for (std::size_t n = 0; n < n_mc; ++n) {
    const auto w_t = gaussian_forward_sample(x_data, alpha_tilde_t, K, rng);
    if (argmax(w_t) != z_t) continue;
    ++accepted;
    counts[argmax(ddim_step(w_t, x_hat, alpha_tilde_s, alpha_tilde_t))] += 1.0;
  }
  if (accepted < 100) throw InsufficientSamplesError(accepted, 100);
  return {Categorical::normalized(std::move(counts)), accepted};
}

struct SampleHeader {
  std::size_t K = 0;
  std::size_t L = 0;
  std::size_t T = 0;
  bool greedy_tail = false;
  std::uint64_t seed = 0;
};

/// Header comment line, then one sequence per line as space-separated ids.
inline void write_samples(std::ostream& os, const SampleHeader& h, const std::vector<TokenSeq>& samples) {
  os << "# K=" << h.K << " L=" << h.L << " T=" << h.T << " greedy_tail=" << (h.greedy_tail ? 1 : 0)
     << " seed=" << h.seed << "\n";
  for (const auto& s : samples) {
    for (std::size_t l = 0; l < s.size(); ++l) os << (l ? " " : "") << s[l];
    os << "\n";
  }
}

}  // namespace duo
