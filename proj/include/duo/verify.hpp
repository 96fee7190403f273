#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "duo/categorical.hpp"
#include "duo/error.hpp"
#include "duo/models.hpp"
#include "duo/objectives.hpp"
#include "duo/processes.hpp"
#include "duo/rng.hpp"
#include "duo/sampling.hpp"
#include "duo/schedule.hpp"
#include "duo/seqdist.hpp"

namespace duo {

enum class ReportStatus { kPass, kFail, kInconclusive };

inline const char* to_string(ReportStatus s) {
  switch (s) {
    case ReportStatus::kPass: return "pass";
    case ReportStatus::kFail: return "fail";
    case ReportStatus::kInconclusive: return "inconclusive";
  }
  return "unknown";
}

/// One verification outcome. pass holds iff statistic <= threshold, except
/// for reports marked inconclusive, which never pass.
struct TestReport {
  std::string name;
  double statistic = 0.0;
  double threshold = 0.0;
  bool pass = false;
  ReportStatus status = ReportStatus::kFail;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  std::string bound;  // how threshold was derived

  nlohmann::json to_json() const {
    return {{"name", name},           {"statistic", statistic}, {"threshold", threshold},
            {"pass", pass},           {"status", to_string(status)}, {"n_samples", n_samples},
            {"seed", seed},           {"bound", bound}};
  }
  std::string json_line() const { return to_json().dump(); }
};

namespace detail {

inline TestReport make_report(std::string name, double statistic, double threshold, std::size_t n, std::uint64_t seed,
                              std::string bound) {
  TestReport r{std::move(name), statistic, threshold, false, ReportStatus::kFail, n, seed, std::move(bound)};
  r.pass = statistic <= threshold;
  r.status = r.pass ? ReportStatus::kPass : ReportStatus::kFail;
  return r;
}

inline double multinomial_tv_bound(std::size_t K, std::size_t n) {
  return 3.0 * std::sqrt(static_cast<double>(K) / static_cast<double>(n));
}

}  // namespace detail

/// Empirical law of argmax(w), w ~ N(alpha~ e_0, sigma~^2 I), against the
/// discrete marginal at T(alpha~). Threshold 3 sqrt(K/n).
inline TestReport duality_test(std::size_t K, double alpha_tilde, std::size_t n, std::uint64_t seed) {
  detail::require(n >= 10000, ErrorKind::kParameter, "duality_test needs n >= 1e4");
  detail::require(K >= 2, ErrorKind::kParameter, "duality_test needs K >= 2");
  CounterRng rng(seed);
  std::vector<double> counts(K, 0.0);
  for (std::size_t i = 0; i < n; ++i) counts[argmax(gaussian_forward_sample(0, alpha_tilde, K, rng))] += 1.0;
  for (double& c : counts) c /= static_cast<double>(n);
  const Categorical target = discrete_marginal(0, transform(alpha_tilde, K), K);
  return detail::make_report("duality K=" + std::to_string(K) + " alpha~=" + std::to_string(alpha_tilde),
                             tv_distance(counts, target.probs()), detail::multinomial_tv_bound(K, n), n, seed,
                             "3*sqrt(K/n)");
}

/// Residual of dP/dt = Q_t P with P(t) = discrete_marginal(x, alpha(t)).
/// alpha_of_t supplies the marginal, the schedule supplies alpha' for Q_t.
inline TestReport ode_residual(double t, std::size_t x, std::size_t K, const std::function<double(double)>& alpha_of_t,
                               const AlphaEval& at_t, double h, double threshold = 1e-4) {
  detail::require(h > 0.0 && t >= h && t <= 1.0 - h, ErrorKind::kDomain, "ode_residual needs t in [h, 1-h]");
  detail::require(x < K, ErrorKind::kIndex, "token out of range");
  const auto plus = discrete_marginal(x, alpha_of_t(t + h), K);
  const auto minus = discrete_marginal(x, alpha_of_t(t - h), K);
  const auto mid = discrete_marginal(x, alpha_of_t(t), K);
  const Matrix Q = transition_matrix(at_t.alpha, at_t.alpha_prime, K);
  const auto qp = Q.multiply(mid.probs());
  double worst = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double fd = (plus[k] - minus[k]) / (2.0 * h);
    worst = std::fmax(worst, std::fabs(fd - qp[k]));
  }
  return detail::make_report("ode K=" + std::to_string(K) + " t=" + std::to_string(t), worst, threshold, 0, 0,
                             "fixed 1e-4 at h = 1e-5");
}

/// Table-backed form: alpha(t) = lookup(1 - t), alpha' from the via-transform schedule.
inline TestReport ode_residual(double t, std::size_t x, std::size_t K, std::shared_ptr<const TransformTable> table,
                               double h = 1e-5) {
  detail::require(table && table->vocab_size() == K, ErrorKind::kParameter, "table vocab size mismatch");
  const Schedule schedule = Schedule::via_transform(table);
  detail::require(h > 0.0 && t >= h && t <= 1.0 - h, ErrorKind::kDomain, "ode_residual needs t in [h, 1-h]");
  return ode_residual(
      t, x, K, [&](double u) { return table->lookup(1.0 - u); }, eval_alpha(schedule, t), h);
}

struct NonMarkovWitness {
  TestReport report;
  Categorical gaussian_kernel;  // argmax law of the Gaussian transition from w_s
  Categorical discrete_kernel;  // symmetric discrete kernel at the same level
  std::size_t i = 0, j = 0;     // the two non-argmax indices compared
};

/// Pushes the Gaussian transition N(alpha~_{t|s} w_s, 1 - alpha~_{t|s}^2) through
/// argmax and compares two non-argmax indices; the discrete kernel at
/// T(alpha~_{t|s}) gives them equal mass.
inline NonMarkovWitness nonmarkov_demo(const std::vector<double>& w_s, double alpha_tilde_ts,
                                       double rel_tol = kDefaultTransformTol) {
  const std::size_t K = w_s.size();
  detail::require(K >= 3, ErrorKind::kWitness, "witness needs K >= 3");
  detail::require(alpha_tilde_ts > 0.0 && alpha_tilde_ts < 1.0, ErrorKind::kParameter, "alpha~_{t|s} outside (0,1)");
  const std::size_t top = argmax(w_s);
  std::size_t i = K, j = K;
  for (std::size_t a = 0; a < K && i == K; ++a) {
    for (std::size_t b = a + 1; b < K; ++b) {
      if (a != top && b != top && w_s[a] != w_s[b]) {
        i = a;
        j = b;
        break;
      }
    }
  }
  if (i == K) throw Error(ErrorKind::kWitness, "non-max entries of w_s are all equal; kernel is symmetric");
  std::vector<double> mean(w_s);
  for (double& m : mean) m *= alpha_tilde_ts;
  Categorical g = argmax_pushforward(mean, sigma_tilde(alpha_tilde_ts), rel_tol);
  Categorical d = transition_kernel(top, transform(alpha_tilde_ts, K, rel_tol), K);
  const double gap = std::fabs(g[i] - g[j]);
  TestReport r{"nonmarkov", gap, 0.01, gap > 0.01, gap > 0.01 ? ReportStatus::kPass : ReportStatus::kFail, 0, 0,
               "gap must exceed 0.01"};
  return {std::move(r), std::move(g), std::move(d), i, j};
}

/// Mixture sum_k weights[k] N(levels[k] e_k, (1 - levels[k]^2) I) over the K vertices.
struct VertexMixture {
  std::vector<double> weights;
  std::vector<double> levels;

  std::size_t dim() const { return weights.size(); }

  void validate() const {
    detail::require(weights.size() == levels.size() && weights.size() >= 2, ErrorKind::kShape,
                    "mixture needs matching weights and levels");
    double s = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      detail::require(weights[k] >= 0.0, ErrorKind::kParameter, "mixture weight must be >= 0");
      detail::require(levels[k] >= 0.0 && levels[k] < 1.0, ErrorKind::kParameter, "mixture level outside [0,1)");
      s += weights[k];
    }
    detail::require(std::fabs(s - 1.0) <= 1e-10, ErrorKind::kParameter, "mixture weights must sum to 1");
  }

  double log_density(const std::vector<double>& w) const {
    const std::size_t K = dim();
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(K, mx);
    for (std::size_t k = 0; k < K; ++k) {
      if (weights[k] == 0.0) continue;
      const double s = sigma_tilde(levels[k]);
      double sq = 0.0;
      for (std::size_t j = 0; j < K; ++j) {
        const double d = w[j] - (j == k ? levels[k] : 0.0);
        sq += d * d;
      }
      terms[k] = std::log(weights[k]) - 0.5 * sq / (s * s) - static_cast<double>(K) * (std::log(s) + normal::kLogSqrt2Pi);
      mx = std::fmax(mx, terms[k]);
    }
    double acc = 0.0;
    for (double v : terms) {
      if (std::isfinite(v)) acc += std::exp(v - mx);
    }
    return mx + std::log(acc);
  }

  std::vector<double> sample(CounterRng& rng) const {
    const std::size_t k = sample_categorical(Categorical::normalized(weights), rng);
    return gaussian_forward_sample(k, levels[k], dim(), rng);
  }

  Categorical pushforward(double rel_tol = kDefaultTransformTol) const {
    const std::size_t K = dim();
    std::vector<double> p(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      if (weights[k] == 0.0) continue;
      std::vector<double> mean(K, 0.0);
      mean[k] = levels[k];
      const Categorical c = argmax_pushforward(mean, sigma_tilde(levels[k]), rel_tol);
      for (std::size_t i = 0; i < K; ++i) p[i] += weights[k] * c[i];
    }
    return Categorical::normalized(std::move(p));
  }
};

struct DpiResult {
  TestReport report;
  double kl_continuous = 0.0;
  double kl_continuous_se = 0.0;
  double kl_pushforward = 0.0;
};

/// KL(q || p) by Monte Carlo in R^K against the exact KL of the argmax laws.
/// Passes if KL_push <= KL_cont + 3 SE; reports inconclusive when SE exceeds
/// 10% of the continuous estimate.
inline DpiResult dpi_test(const VertexMixture& q, const VertexMixture& p, std::size_t n_mc, std::uint64_t seed) {
  q.validate();
  p.validate();
  detail::require(q.dim() == p.dim(), ErrorKind::kShape, "mixtures must share K");
  detail::require(n_mc >= 2, ErrorKind::kParameter, "dpi_test needs n_mc >= 2");
  CounterRng rng(seed);
  std::vector<double> draws(n_mc);
  for (auto& v : draws) {
    const auto w = q.sample(rng);
    v = q.log_density(w) - p.log_density(w);
  }
  const NelboEstimate est = summarize(draws);
  const Categorical pq = q.pushforward();
  const Categorical pp = p.pushforward();
  const double kl_push = kl_categorical(pq, pp);
  DpiResult out;
  out.kl_continuous = est.mean;
  out.kl_continuous_se = est.std_error;
  out.kl_pushforward = kl_push;
  out.report = detail::make_report("dpi", kl_push - est.mean, 3.0 * est.std_error, n_mc, seed,
                                   "KL_push - KL_cont <= 3 SE");
  if (est.std_error > 0.1 * std::fabs(est.mean)) {
    out.report.status = ReportStatus::kInconclusive;
    out.report.pass = false;
  }
  return out;
}

/// Loss and (optionally) its parameter gradient at the model's current parameters.
using LossFn = std::function<double(const TrainableDenoiser&, std::vector<double>*)>;

/// sum(upstream * model(z, t)); the gradient comes from vjp_tokens.
inline LossFn token_probe_loss(TokenSeq z, double t, Matrix upstream) {
  return [z = std::move(z), t, u = std::move(upstream)](const TrainableDenoiser& m, std::vector<double>* grad) {
    const Matrix out = m.eval_tokens(z, t, 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) loss += u.data[i] * out.data[i];
    if (grad) *grad = m.vjp_tokens(z, t, u);
    return loss;
  };
}

/// sum(upstream * model(rows, t)) on simplex inputs.
inline LossFn simplex_probe_loss(Matrix rows, double t, Matrix upstream) {
  return [rows = std::move(rows), t, u = std::move(upstream)](const TrainableDenoiser& m, std::vector<double>* grad) {
    const Matrix out = m.eval_simplex(rows, t);
    double loss = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) loss += u.data[i] * out.data[i];
    if (grad) *grad = m.vjp_simplex(rows, t, u);
    return loss;
  };
}

inline constexpr double kGradCheckFloor = 1e-3;

/// Max over parameters of |g - fd| / max(|g|, |fd|, 1e-3) with central differences of width eps.
inline TestReport gradient_check(TrainableDenoiser& model, const LossFn& loss_fn, double eps = 1e-6) {
  detail::require(eps > 0.0, ErrorKind::kParameter, "gradient_check needs eps > 0");
  std::vector<double> grad;
  loss_fn(model, &grad);
  auto& p = model.params();
  detail::require(grad.size() == p.size(), ErrorKind::kShape, "gradient size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + eps;
    const double lp = loss_fn(model, nullptr);
    p[i] = keep - eps;
    const double lm = loss_fn(model, nullptr);
    p[i] = keep;
    const double fd = (lp - lm) / (2.0 * eps);
    const double denom = std::fmax(std::fmax(std::fabs(grad[i]), std::fabs(fd)), kGradCheckFloor);
    worst = std::fmax(worst, std::fabs(grad[i] - fd) / denom);
  }
  return detail::make_report("gradcheck", worst, 1e-5, p.size(), 0, "relative error 1e-5, floor 1e-3");
}

struct VarianceProbe {
  double mean = 0.0;
  double variance = 0.0;
};

/// Sample mean and unbiased variance of n_reps loss draws.
inline VarianceProbe variance_probe(const std::function<double()>& loss_sampler, std::size_t n_reps) {
  detail::require(n_reps >= 100, ErrorKind::kParameter, "variance_probe needs n_reps >= 100");
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n_reps; ++i) {
    const double v = loss_sampler();
    const double d = v - mean;
    mean += d / static_cast<double>(i + 1);
    m2 += d * (v - mean);
  }
  return {mean, m2 / static_cast<double>(n_reps - 1)};
}

/// Discrete-latent NELBO against the Gaussian-latent NELBO of the same denoiser.
/// Statistic |difference|, threshold 3 combined SE.
inline TestReport elbo_equivalence_test(const std::vector<TokenSeq>& corpus, const Denoiser& denoiser,
                                        std::shared_ptr<const TransformTable> table, std::size_t n_mc,
                                        std::uint64_t seed) {
  CounterRng r1 = CounterRng(seed).substream(1);
  CounterRng r2 = CounterRng(seed).substream(2);
  const auto a = sequence_nelbo(corpus, denoiser, Schedule::via_transform(table), TimeMode::kIid, n_mc, r1);
  const auto b = nelbo_gaussian_latents(corpus, denoiser, table, TimeMode::kIid, n_mc, r2);
  const double se = std::sqrt(a.std_error * a.std_error + b.std_error * b.std_error);
  return detail::make_report("elbo-equivalence", std::fabs(a.mean - b.mean), 3.0 * se, n_mc, seed,
                             "3*sqrt(se_discrete^2 + se_gaussian^2)");
}

/// Relative gap between f_duo and f_udlm over random configurations
/// (K in [2, 8], alpha log-uniform on [1e-3, 1), logits N(0, 1)), plus exact
/// zero for perfect predictions.
inline TestReport f_equality_test(std::size_t n_configs, std::uint64_t seed) {
  CounterRng rng(seed);
  double worst = 0.0;
  bool perfect_zero = true;
  for (std::size_t n = 0; n < n_configs; ++n) {
    const std::size_t K = 2 + rng.below(7);
    const double alpha = std::exp(std::log(1e-3) * rng.uniform());
    const double ap = -std::exp(4.0 * rng.uniform() - 2.0);
    const NoiseLevel level = NoiseLevel::make(alpha, ap, K);
    const std::size_t x = rng.below(K);
    const std::size_t z = rng.below(K);
    std::vector<double> logits(K);
    for (double& v : logits) v = rng.normal();
    softmax_inplace(logits.data(), K);
    const double a = f_duo(z, logits, level, x);
    const double b = f_udlm(z, logits, level, x);
    worst = std::fmax(worst, std::fabs(a - b) / std::fmax(std::fabs(b), 1e-300));
    const auto hot = Categorical::one_hot(x, K).probs();
    perfect_zero = perfect_zero && f_duo(z, hot, level, x) == 0.0;
  }
  TestReport r = detail::make_report("f-equality", worst, 1e-9, n_configs, seed, "relative 1e-9");
  if (!perfect_zero) {
    r.pass = false;
    r.status = ReportStatus::kFail;
    r.bound += "; perfect prediction not exactly zero";
  }
  return r;
}

/// Violations of the single change point property on random (x, eps)
/// trajectories; a change must sit in the grid cell containing flip_time.
inline TestReport ddt_flip_test(std::size_t K, std::size_t n_traj, std::size_t n_grid, std::uint64_t seed) {
  detail::require(K >= 2 && n_grid >= 2, ErrorKind::kParameter, "ddt_flip_test needs K >= 2 and n_grid >= 2");
  CounterRng rng(seed);
  std::size_t violations = 0;
  for (std::size_t n = 0; n < n_traj; ++n) {
    const TokenSeq x{static_cast<Token>(rng.below(K))};
    Matrix eps(1, K);
    for (double& e : eps.data) e = rng.normal();
    const Trajectory tr = ddt_trajectory(x, eps, n_grid);
    const double t_star = flip_time(x[0], eps.data);
    std::size_t changes = 0;
    bool located = true;
    for (std::size_t i = 0; i + 1 < n_grid; ++i) {
      if (tr.states[i][0] == tr.states[i + 1][0]) continue;
      ++changes;
      located = located && tr.times[i + 1] <= t_star && t_star < tr.times[i];
    }
    const bool expect_change = t_star < 1.0;
    if (changes > 1 || !located || (changes == 1) != expect_change) ++violations;
  }
  return detail::make_report("ddt", static_cast<double>(violations), 0.0, n_traj, seed, "zero violations");
}

/// Composition sum_z P_t(z) step(z) vs the discrete marginal at T(alpha~_s),
/// each cell within 3 sigma of the per-z multinomial errors.
inline TestReport thm31_test(const TransformTable& table, double alpha_tilde_s, double alpha_tilde_t,
                             std::size_t n_mc, std::uint64_t seed) {
  const std::size_t K = table.vocab_size();
  const std::size_t x = 0;
  const Categorical p_t = discrete_marginal(x, transform(alpha_tilde_t, K), K);
  const Categorical target = discrete_marginal(x, transform(alpha_tilde_s, K), K);
  CounterRng rng(seed);
  std::vector<double> est(K, 0.0), var(K, 0.0);
  std::size_t total = 0;
  for (std::size_t z = 0; z < K; ++z) {
    CounterRng sub = rng.substream(z);
    const StepEstimate s = marginal_preserving_step(z, x, table, alpha_tilde_s, alpha_tilde_t, n_mc, sub);
    total += s.accepted;
    for (std::size_t i = 0; i < K; ++i) {
      est[i] += p_t[z] * s.dist[i];
      var[i] += p_t[z] * p_t[z] * s.dist[i] * (1.0 - s.dist[i]) / static_cast<double>(s.accepted);
    }
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    const double sigma = std::sqrt(var[i]);
    const double dev = std::fabs(est[i] - target[i]);
    worst = std::fmax(worst, sigma > 0.0 ? dev / sigma : (dev == 0.0 ? 0.0 : std::numeric_limits<double>::infinity()));
  }
  return detail::make_report("thm31 K=" + std::to_string(K), worst, 3.0, total, seed,
                             "max cell deviation in multinomial sigmas <= 3");
}

}  // namespace duo
