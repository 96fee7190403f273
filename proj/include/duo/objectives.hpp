#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "duo/categorical.hpp"
#include "duo/error.hpp"
#include "duo/models.hpp"
#include "duo/processes.hpp"
#include "duo/rng.hpp"
#include "duo/schedule.hpp"

namespace duo {

inline constexpr double kDiscreteTimeEps = 1e-6;
inline constexpr double kGaussianTimeEps = 1e-3;

/// Discrete level at one time: alpha, alpha', and kappa = (1 - a)/(K a + 1 - a).
struct NoiseLevel {
  double alpha = 0.0;
  double alpha_prime = 0.0;
  double kappa = 0.0;

  static NoiseLevel make(double alpha, double alpha_prime, std::size_t K) {
    detail::require(alpha > 0.0 && alpha <= 1.0, ErrorKind::kDomain, "noise level needs alpha in (0,1]");
    const double Kd = static_cast<double>(K);
    return {alpha, alpha_prime, (1.0 - alpha) / (Kd * alpha + 1.0 - alpha)};
  }
};

struct NelboEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
};

inline NelboEstimate summarize(const std::vector<double>& values) {
  detail::require(!values.empty(), ErrorKind::kParameter, "no samples to summarize");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double se = values.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return {mean, se, values.size()};
}

enum class TimeMode { kIid, kLowDiscrepancy, kAntithetic };

inline TimeMode parse_time_mode(const std::string& s) {
  if (s == "iid") return TimeMode::kIid;
  if (s == "low-discrepancy") return TimeMode::kLowDiscrepancy;
  if (s == "antithetic") return TimeMode::kAntithetic;
  throw Error(ErrorKind::kParameter, "unknown time sampler mode: " + s);
}

inline const char* to_string(TimeMode m) {
  switch (m) {
    case TimeMode::kIid: return "iid";
    case TimeMode::kLowDiscrepancy: return "low-discrepancy";
    case TimeMode::kAntithetic: return "antithetic";
  }
  return "unknown";
}

/// n times on [a, b]. Low-discrepancy puts draw i in the i-th of n equal
/// bins; antithetic emits pairs (t, a + b - t), with a trailing iid draw for odd n.
inline std::vector<double> time_sampler(std::size_t n, TimeMode mode, double a, double b, CounterRng& rng) {
  detail::require(n >= 1, ErrorKind::kParameter, "time_sampler needs n >= 1");
  detail::require(a < b, ErrorKind::kParameter, "time_sampler needs a < b");
  std::vector<double> t(n);
  const double w = b - a;
  switch (mode) {
    case TimeMode::kIid:
      for (auto& v : t) v = a + w * rng.uniform();
      break;
    case TimeMode::kLowDiscrepancy: {
      const double nd = static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) t[i] = a + w * (static_cast<double>(i) + rng.uniform()) / nd;
      break;
    }
    case TimeMode::kAntithetic:
      for (std::size_t i = 0; i + 1 < n; i += 2) {
        t[i] = a + w * rng.uniform();
        t[i + 1] = a + b - t[i];
      }
      if (n % 2 == 1) t[n - 1] = a + w * rng.uniform();
      break;
  }
  return t;
}

namespace detail {

inline void check_f_inputs(std::size_t z_t, std::span<const double> x_hat, const NoiseLevel& level, std::size_t x) {
  const std::size_t K = x_hat.size();
  require(K >= 2, ErrorKind::kShape, "f needs K >= 2");
  require(z_t < K && x < K, ErrorKind::kIndex, "f token out of range");
  require(level.alpha > 0.0 && level.alpha <= 1.0, ErrorKind::kDomain, "f needs alpha in (0,1]");
  require(level.alpha < 1.0 || z_t == x, ErrorKind::kDomain, "z_t != x has probability zero at alpha = 1");
}

}  // namespace detail

namespace detail {

// psi(d) = d - log(1 + d), by series where direct evaluation cancels.
inline double bregman_psi(double d) {
  if (std::fabs(d) < 0.1) {
    double term = d * d;
    double acc = 0.0;
    for (int k = 2; k < 40; ++k) {
      const double c = term / k;
      acc += (k % 2 == 0) ? c : -c;
      if (std::fabs(c) < 1e-18 * std::fabs(acc)) break;
      term *= d;
    }
    return acc;
  }
  return d - std::log1p(d);
}

}  // namespace detail

/// Token-level USDM NELBO integrand with explicit x_bar:
///   w [ K/xbt_i - K/xb_i + sum_j (xb_j/xb_i) log((xbt_i xb_j)/(xbt_j xb_i)) ],  w = -a'/(K a) > 0,
/// xb = K a e_x + (1 - a), xbt = K a x_hat + (1 - a) floored at 1e-30, i = z_t.
///
/// Since sum_j xb_j = sum_j xbt_j = K, the bracket is
/// sum_{j != i} [ D_j - r_j log(1 + D_j / r_j) ] with r_j = xb_j/xb_i and
/// D_j = xbt_j/xbt_i - r_j; each term is nonnegative and is evaluated without
/// cancellation.
inline double f_udlm(std::size_t z_t, std::span<const double> x_hat, const NoiseLevel& level, std::size_t x) {
  detail::check_f_inputs(z_t, x_hat, level, x);
  const std::size_t K = x_hat.size();
  const double Kd = static_cast<double>(K);
  const double a = level.alpha;
  std::vector<double> xb(K, 1.0 - a), xbt(K);
  xb[x] = Kd * a + 1.0 - a;
  for (std::size_t k = 0; k < K; ++k) xbt[k] = std::fmax(Kd * a * x_hat[k] + 1.0 - a, kProbFloor);
  const std::size_t i = z_t;
  double bracket = 0.0;
  for (std::size_t j = 0; j < K; ++j) {
    if (j == i) continue;
    const double r = xb[j] / xb[i];
    // xbt_j xb_i - xb_j xbt_i, expanded so no O(1) products cancel
    const double dix = (i == x) ? 1.0 : 0.0;
    const double djx = (j == x) ? 1.0 : 0.0;
    const double num = Kd * a * (Kd * a * (x_hat[j] * dix - djx * x_hat[i]) + (1.0 - a) * (x_hat[j] + dix - djx - x_hat[i]));
    const double D = (xbt[j] == kProbFloor || xbt[i] == kProbFloor) ? (xbt[j] * xb[i] - xb[j] * xbt[i]) / (xbt[i] * xb[i])
                                                                    : num / (xbt[i] * xb[i]);
    bracket += (r == 0.0) ? D : r * detail::bregman_psi(D / r);
  }
  return -level.alpha_prime / (Kd * a) * bracket;
}

/// Rao-Blackwellized integrand: with m = x and lk = log kappa,
///   i = m:  K/xbt_i - K/xb_i + kappa sum_j log(xbt_i/xbt_j) + (K-1) kappa lk
///   i != m: K/xbt_i - K/xb_i + sum_j log(xbt_i/xbt_j) + (K a/(1-a)) log(xbt_i/xbt_m) - lk / kappa
/// scaled by w = -a'/(K a).
///
/// Each log-kappa term is folded into the log ratio it cancels against
/// (using 1/kappa = 1 + K a/(1-a)), and every difference is formed from its
/// factored numerator, so terms are O(a) with full relative precision and a
/// perfect prediction gives exactly zero.
inline double f_duo(std::size_t z_t, std::span<const double> x_hat, const NoiseLevel& level, std::size_t x) {
  detail::check_f_inputs(z_t, x_hat, level, x);
  const std::size_t K = x_hat.size();
  const double Kd = static_cast<double>(K);
  const double a = level.alpha;
  const double b = 1.0 - a;
  const double Ka = Kd * a;
  const std::size_t i = z_t;
  const std::size_t m = x;
  auto xbt = [&](std::size_t j) { return std::fmax(Ka * x_hat[j] + b, kProbFloor); };
  const double xbt_i = xbt(i);
  // 1 - x_hat[k] as the sum of the other entries, matching the form where
  // the simplex identity was used
  auto rest = [&](std::size_t k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      if (j != k) acc += x_hat[j];
    }
    return acc;
  };
  double bracket = 0.0;
  if (i == m) {
    const double xb_i = Ka + b;
    const double rest_i = rest(i);
    bracket = Kd * Ka * rest_i / (xbt_i * xb_i);
    if (level.kappa > 0.0) {
      double s = 0.0;
      for (std::size_t j = 0; j < K; ++j) {
        if (j == i) continue;
        // log(xbt_i / xbt_j) + lk
        s += std::log1p((-Ka * b * (rest_i + x_hat[j]) - Ka * Ka * x_hat[j]) / (xbt(j) * xb_i));
      }
      bracket += level.kappa * s;
    }
  } else {
    bracket = -Kd * Ka * x_hat[i] / (xbt_i * b);
    double s = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      if (j != i && j != m) s += std::log1p(Ka * (x_hat[i] - x_hat[j]) / xbt(j));
    }
    // log(xbt_i / xbt_m) - lk
    const double h = std::log1p((Ka * Ka * x_hat[i] + Ka * b * (x_hat[i] + rest(m))) / (xbt(m) * b));
    bracket += s + (1.0 + Ka / b) * h;
  }
  return -level.alpha_prime / (Kd * a) * bracket;
}

/// d f_duo / d x_hat (floored entries get zero gradient).
inline std::vector<double> f_duo_grad(std::size_t z_t, std::span<const double> x_hat, const NoiseLevel& level,
                                      std::size_t x) {
  detail::check_f_inputs(z_t, x_hat, level, x);
  const std::size_t K = x_hat.size();
  const double Kd = static_cast<double>(K);
  const double a = level.alpha;
  const std::size_t i = z_t;
  const std::size_t m = x;
  std::vector<double> xbt(K);
  for (std::size_t k = 0; k < K; ++k) xbt[k] = Kd * a * x_hat[k] + 1.0 - a;
  const double c1 = (i == m) ? level.kappa : 1.0;
  const double c2 = (i == m) ? 0.0 : Kd * a / (1.0 - a);
  const double w = -level.alpha_prime / (Kd * a);
  std::vector<double> g(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    if (xbt[k] < kProbFloor) continue;
    double d = c1 / xbt[k];
    if (k == i) d += Kd / (xbt[i] * xbt[i]) - c1 * Kd / xbt[i] - c2 / xbt[i];
    if (k == m && i != m) d += c2 / xbt[m];
    g[k] = -w * d * Kd * a;
  }
  return g;
}

/// softmax(w / tau); tau = 0 is the one-hot at argmax (lowest index on ties).
inline Categorical tempered_softmax(std::span<const double> w, double tau) {
  detail::require(tau >= 0.0, ErrorKind::kParameter, "temperature must be >= 0");
  detail::require(!w.empty(), ErrorKind::kShape, "empty logits");
  if (tau == 0.0) return Categorical::one_hot(argmax(w), w.size());
  std::vector<double> p(w.begin(), w.end());
  for (double& v : p) v /= tau;
  softmax_inplace(p.data(), p.size());
  return Categorical::normalized(std::move(p));
}

namespace detail {

inline double sequence_f_duo(const TokenSeq& x, const TokenSeq& z, const Matrix& x_hat, const NoiseLevel& level) {
  double total = 0.0;
  for (std::size_t l = 0; l < x.size(); ++l) {
    total += f_duo(z[l], std::span<const double>(x_hat.row(l), x_hat.cols), level, x[l]);
  }
  return total;
}

inline void check_batch(const std::vector<TokenSeq>& seqs, std::size_t K) {
  require(!seqs.empty(), ErrorKind::kParameter, "empty sequence batch");
  const std::size_t L = seqs.front().size();
  require(L >= 1, ErrorKind::kShape, "sequences must be nonempty");
  for (const auto& s : seqs) {
    require(s.size() == L, ErrorKind::kShape, "ragged sequence batch");
    check_tokens(s, K);
  }
}

// Draw from alpha e_x + (1 - alpha)/K as a keep-or-resample mixture.
inline TokenSeq corrupt(const TokenSeq& x, double alpha, std::size_t K, CounterRng& rng) {
  TokenSeq z(x.size());
  for (std::size_t l = 0; l < x.size(); ++l) {
    z[l] = rng.uniform() < alpha ? x[l] : static_cast<Token>(rng.below(K));
  }
  return z;
}

}  // namespace detail

/// Per-token NELBO by Monte Carlo over (sequence, t, z_t). Draw i picks a
/// sequence uniformly, takes the i-th time from the sampler on
/// [1e-6, 1 - 1e-6], and corrupts every token at alpha(t).
inline NelboEstimate sequence_nelbo(const std::vector<TokenSeq>& seqs, const Denoiser& denoiser,
                                    const Schedule& schedule, TimeMode mode, std::size_t n_mc, CounterRng& rng,
                                    std::vector<double>* per_draw = nullptr) {
  detail::require(n_mc >= 1, ErrorKind::kParameter, "n_mc must be >= 1");
  detail::require(schedule.is_discrete(), ErrorKind::kParameter, "sequence_nelbo needs a discrete schedule");
  const std::size_t K = denoiser.vocab_size();
  detail::check_batch(seqs, K);
  const auto times = time_sampler(n_mc, mode, kDiscreteTimeEps, 1.0 - kDiscreteTimeEps, rng);
  std::vector<double> values(n_mc);
  for (std::size_t i = 0; i < n_mc; ++i) {
    const TokenSeq& x = seqs[rng.below(seqs.size())];
    const AlphaEval ev = schedule.eval(times[i]);
    const NoiseLevel level = NoiseLevel::make(ev.alpha, ev.alpha_prime, K);
    const TokenSeq z = detail::corrupt(x, ev.alpha, K, rng);
    const Matrix x_hat = denoiser.eval_tokens(z, times[i], ev.alpha);
    values[i] = detail::sequence_f_duo(x, z, x_hat, level) / static_cast<double>(x.size());
  }
  if (per_draw) *per_draw = values;
  return summarize(values);
}

/// The same estimand with z_t = argmax(w_t), w_t ~ N((1 - t) e_x, (1 - (1 - t)^2) I).
inline NelboEstimate nelbo_gaussian_latents(const std::vector<TokenSeq>& seqs, const Denoiser& denoiser,
                                            std::shared_ptr<const TransformTable> table, TimeMode mode,
                                            std::size_t n_mc, CounterRng& rng,
                                            std::vector<double>* per_draw = nullptr) {
  detail::require(n_mc >= 1, ErrorKind::kParameter, "n_mc must be >= 1");
  const std::size_t K = denoiser.vocab_size();
  detail::require(table && table->vocab_size() == K, ErrorKind::kParameter, "table vocab size mismatch");
  detail::check_batch(seqs, K);
  const Schedule schedule = Schedule::via_transform(table);
  const auto times = time_sampler(n_mc, mode, kDiscreteTimeEps, 1.0 - kDiscreteTimeEps, rng);
  std::vector<double> values(n_mc);
  for (std::size_t i = 0; i < n_mc; ++i) {
    const TokenSeq& x = seqs[rng.below(seqs.size())];
    const double a_tilde = 1.0 - times[i];
    const AlphaEval ev = schedule.eval(times[i]);
    const NoiseLevel level = NoiseLevel::make(ev.alpha, ev.alpha_prime, K);
    TokenSeq z(x.size());
    for (std::size_t l = 0; l < x.size(); ++l) {
      z[l] = static_cast<Token>(argmax(gaussian_forward_sample(x[l], a_tilde, K, rng)));
    }
    const Matrix x_hat = denoiser.eval_tokens(z, times[i], ev.alpha);
    values[i] = detail::sequence_f_duo(x, z, x_hat, level) / static_cast<double>(x.size());
  }
  if (per_draw) *per_draw = values;
  return summarize(values);
}

/// Continuous-space NELBO -E[nu'(t) ||e_x - x_hat||^2] per token, t iid on [1e-3, 1 - 1e-3].
inline NelboEstimate gaussian_nelbo(const std::vector<TokenSeq>& seqs, const GaussianDenoiser& denoiser,
                                    std::size_t n_mc, CounterRng& rng) {
  detail::require(n_mc >= 1, ErrorKind::kParameter, "n_mc must be >= 1");
  const std::size_t K = denoiser.vocab_size();
  detail::check_batch(seqs, K);
  std::vector<double> values(n_mc);
  for (std::size_t i = 0; i < n_mc; ++i) {
    const TokenSeq& x = seqs[rng.below(seqs.size())];
    const double t = kGaussianTimeEps + (1.0 - 2.0 * kGaussianTimeEps) * rng.uniform();
    const double a_tilde = 1.0 - t;
    Matrix w(x.size(), K);
    for (std::size_t l = 0; l < x.size(); ++l) {
      const auto row = gaussian_forward_sample(x[l], a_tilde, K, rng);
      std::copy(row.begin(), row.end(), w.row(l));
    }
    const Matrix x_hat = denoiser.eval(w, t);
    double sq = 0.0;
    for (std::size_t l = 0; l < x.size(); ++l) {
      for (std::size_t k = 0; k < K; ++k) {
        const double d = (k == x[l] ? 1.0 : 0.0) - x_hat(l, k);
        sq += d * d;
      }
    }
    values[i] = -snr_time_derivative(t) * sq / static_cast<double>(x.size());
  }
  return summarize(values);
}

/// Curriculum step configuration. beta and gamma bound the time window; the
/// table supplies alpha = T(1 - t).
struct CurriculumConfig {
  double tau = 0.0;
  double beta = 0.0;
  double gamma = 1.0;
  std::shared_ptr<const TransformTable> table;
  TimeMode time_mode = TimeMode::kLowDiscrepancy;

  void validate() const {
    detail::require(tau >= 0.0, ErrorKind::kParameter, "curriculum tau must be >= 0");
    detail::require(beta >= 0.0 && gamma <= 1.0, ErrorKind::kParameter, "curriculum window outside [0,1]");
    detail::require(beta < gamma, ErrorKind::kParameter, "curriculum needs beta < gamma");
    detail::require(table != nullptr, ErrorKind::kParameter, "curriculum needs a transform table");
  }
};

/// [beta, gamma] such that T(1 - t) spans [lo, hi] on the window.
inline std::pair<double, double> curriculum_window(const TransformTable& table, double lo = 0.05, double hi = 0.95) {
  detail::require(0.0 <= lo && lo < hi && hi <= 1.0, ErrorKind::kParameter, "window targets must satisfy lo < hi");
  return {1.0 - table.invert(hi), 1.0 - table.invert(lo)};
}

struct CurriculumDiagnostics {
  std::vector<double> times;
  std::vector<double> per_sequence;  // nats per token, one per batch entry
};

struct CurriculumResult {
  double loss = 0.0;  // mean over the batch, nats per token
  CurriculumDiagnostics diagnostics;
  std::vector<double> grad;  // filled by curriculum_loss_grad
};

namespace detail {

inline CurriculumResult curriculum_impl(const std::vector<TokenSeq>& seqs, const CurriculumConfig& config,
                                        const Denoiser& denoiser, const TrainableDenoiser* trainable,
                                        CounterRng& rng) {
  config.validate();
  const std::size_t K = denoiser.vocab_size();
  require(config.table->vocab_size() == K, ErrorKind::kParameter, "table vocab size mismatch");
  check_batch(seqs, K);
  const bool soft = config.tau > 0.0;
  require(!soft || denoiser.accepts_simplex(), ErrorKind::kCapability, "tau > 0 needs a simplex-input denoiser");
  const Schedule schedule = Schedule::via_transform(config.table);
  const double lo = std::fmax(config.beta, kDiscreteTimeEps);
  const double hi = std::fmin(config.gamma, 1.0 - kDiscreteTimeEps);
  CurriculumResult out;
  out.diagnostics.times = time_sampler(seqs.size(), config.time_mode, lo, hi, rng);
  if (trainable) out.grad.assign(trainable->params().size(), 0.0);
  const double B = static_cast<double>(seqs.size());
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const TokenSeq& x = seqs[b];
    const double L = static_cast<double>(x.size());
    const double t = out.diagnostics.times[b];
    const double a_tilde = 1.0 - t;
    const AlphaEval ev = schedule.eval(t);
    const NoiseLevel level = NoiseLevel::make(ev.alpha, ev.alpha_prime, K);
    TokenSeq z(x.size());
    Matrix rows(x.size(), K);
    for (std::size_t l = 0; l < x.size(); ++l) {
      const auto w = gaussian_forward_sample(x[l], a_tilde, K, rng);
      z[l] = static_cast<Token>(argmax(w));
      const Categorical r = tempered_softmax(w, config.tau);
      std::copy(r.begin(), r.end(), rows.row(l));
    }
    const Matrix x_hat = soft ? denoiser.eval_simplex(rows, t) : denoiser.eval_tokens(z, t, ev.alpha);
    const double v = sequence_f_duo(x, z, x_hat, level) / L;
    out.diagnostics.per_sequence.push_back(v);
    out.loss += v / B;
    if (trainable) {
      Matrix up(x.size(), K);
      for (std::size_t l = 0; l < x.size(); ++l) {
        const auto g = f_duo_grad(z[l], std::span<const double>(x_hat.row(l), K), level, x[l]);
        for (std::size_t k = 0; k < K; ++k) up(l, k) = g[k] / (L * B);
      }
      const auto pg = soft ? trainable->vjp_simplex(rows, t, up) : trainable->vjp_tokens(z, t, up);
      for (std::size_t p = 0; p < pg.size(); ++p) out.grad[p] += pg[p];
    }
  }
  return out;
}

}  // namespace detail

/// Curriculum loss: t ~ sampler on [beta, gamma], w_t Gaussian, z_t = argmax(w_t),
/// denoiser input = tempered_softmax(w_t, tau), alpha = T(1 - t). With tau = 0
/// and the full window this is an unbiased NELBO estimate.
inline CurriculumResult curriculum_loss(const std::vector<TokenSeq>& seqs, const CurriculumConfig& config,
                                        const Denoiser& denoiser, CounterRng& rng) {
  return detail::curriculum_impl(seqs, config, denoiser, nullptr, rng);
}

/// curriculum_loss plus its gradient in the model parameters.
inline CurriculumResult curriculum_loss_grad(const std::vector<TokenSeq>& seqs, const CurriculumConfig& config,
                                             const TrainableDenoiser& model, CounterRng& rng) {
  return detail::curriculum_impl(seqs, config, model, &model, rng);
}

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  double lr = 0.1;
  CurriculumConfig curriculum;
};

/// Plain gradient descent on the curriculum loss with minibatches drawn with
/// replacement. Returns the per-step losses.
inline std::vector<double> train_curriculum(const std::vector<TokenSeq>& corpus, TrainableDenoiser& model,
                                            const TrainConfig& config, CounterRng& rng) {
  detail::require(config.steps >= 1 && config.batch_size >= 1, ErrorKind::kParameter, "train needs steps, batch >= 1");
  detail::require(config.lr > 0.0, ErrorKind::kParameter, "learning rate must be positive");
  detail::require(!corpus.empty(), ErrorKind::kParameter, "empty training corpus");
  std::vector<double> losses;
  losses.reserve(config.steps);
  std::vector<TokenSeq> batch(config.batch_size);
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (auto& s : batch) s = corpus[rng.below(corpus.size())];
    const auto r = curriculum_loss_grad(batch, config.curriculum, model, rng);
    detail::require(std::isfinite(r.loss), ErrorKind::kNumeric, "non-finite loss at step " + std::to_string(step));
    auto& p = model.params();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= config.lr * r.grad[i];
    losses.push_back(r.loss);
  }
  return losses;
}

}  // namespace duo
