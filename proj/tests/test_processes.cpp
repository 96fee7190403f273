#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "duo/processes.hpp"
#include "duo/seqdist.hpp"
#include "support.hpp"

namespace {

using duo::Categorical;
using duo::ErrorKind;
using duo::testing::kind_of;

// p(z_s | z_t) with z_s drawn from alpha_s x_hat + (1 - alpha_s)/K and
// z_t | z_s from the forward kernel at alpha_t / alpha_s.
std::vector<double> bayes_posterior(std::size_t z_t, const std::vector<double>& x_hat, double a_s, double a_t) {
  const std::size_t K = x_hat.size();
  std::vector<double> p(K);
  double sum = 0.0;
  for (std::size_t zs = 0; zs < K; ++zs) {
    const double prior = a_s * x_hat[zs] + (1.0 - a_s) / K;
    const double like = (a_t / a_s) * (zs == z_t ? 1.0 : 0.0) + (1.0 - a_t / a_s) / K;
    p[zs] = prior * like;
    sum += p[zs];
  }
  for (double& v : p) v /= sum;
  return p;
}

TEST(Prior, UniformOnlyAndMaskedRejected) {
  const auto u = duo::make_prior(duo::Prior::kUniform, 5);
  for (double v : u.probs()) EXPECT_DOUBLE_EQ(v, 0.2);
  EXPECT_EQ(kind_of([] { duo::make_prior(duo::Prior::kMasked, 5); }), ErrorKind::kCapability);
}

TEST(Marginals, DiscreteAndGaussianShapes) {
  const auto q = duo::discrete_marginal(2, 0.4, 5);
  EXPECT_NEAR(q[2], 0.4 + 0.12, 1e-15);
  EXPECT_NEAR(q[0], 0.12, 1e-15);
  const auto g = duo::gaussian_marginal(1, 0.6, 3);
  EXPECT_EQ(g.mean, (std::vector<double>{0.0, 0.6, 0.0}));
  EXPECT_DOUBLE_EQ(g.std, 0.8);
  EXPECT_EQ(kind_of([] { duo::discrete_marginal(5, 0.5, 5); }), ErrorKind::kIndex);
  EXPECT_EQ(kind_of([] { duo::discrete_marginal(0, 1.5, 5); }), ErrorKind::kDomain);
}

TEST(TransitionMatrix, ColumnsConserveMassAndRatesAreNonnegative) {
  const auto Q = duo::transition_matrix(0.3, -1.0, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
      s += Q(r, c);
      if (r != c) {
        EXPECT_GE(Q(r, c), 0.0);
      }
    }
    EXPECT_NEAR(s, 0.0, 1e-15);
  }
  EXPECT_EQ(kind_of([] { duo::transition_matrix(0.0, -1.0, 4); }), ErrorKind::kSingularity);
}

TEST(TransitionMatrix, DrivesTheLinearMarginal) {
  // alpha = 1 - t; dP/dt by central difference against Q P.
  for (double t : {0.2, 0.7}) {
    const double h = 1e-6;
    const auto p = duo::discrete_marginal(1, 1.0 - t, 3).probs();
    const auto pp = duo::discrete_marginal(1, 1.0 - t - h, 3).probs();
    const auto pm = duo::discrete_marginal(1, 1.0 - t + h, 3).probs();
    const auto qp = duo::transition_matrix(1.0 - t, -1.0, 3).multiply(p);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR((pp[k] - pm[k]) / (2 * h), qp[k], 1e-8);
  }
}

TEST(TransitionKernel, ComposesMultiplicatively) {
  const std::size_t K = 4;
  const double a_s = 0.8, a_ts = 0.5;
  for (std::size_t x = 0; x < K; ++x) {
    const auto qs = duo::discrete_marginal(x, a_s, K);
    std::vector<double> composed(K, 0.0);
    for (std::size_t zs = 0; zs < K; ++zs) {
      const auto k = duo::transition_kernel(zs, a_ts, K);
      for (std::size_t zt = 0; zt < K; ++zt) composed[zt] += qs[zs] * k[zt];
    }
    const auto direct = duo::discrete_marginal(x, a_s * a_ts, K);
    for (std::size_t zt = 0; zt < K; ++zt) EXPECT_NEAR(composed[zt], direct[zt], 1e-15);
  }
}

TEST(ReversePosterior, MatchesBruteForceBayes) {
  duo::CounterRng rng(11);
  for (std::size_t K = 2; K <= 6; ++K) {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> w(K);
      for (double& v : w) v = rng.uniform() + 1e-3;
      const Categorical x_hat = Categorical::normalized(w);
      const double a_s = 0.2 + 0.8 * rng.uniform();
      const double a_t = a_s * rng.uniform();
      for (std::size_t z = 0; z < K; ++z) {
        const auto got = duo::reverse_posterior(z, x_hat, a_s, a_t);
        const auto want = bayes_posterior(z, x_hat.probs(), a_s, a_t);
        for (std::size_t k = 0; k < K; ++k) EXPECT_NEAR(got[k], want[k], 1e-12);
      }
    }
  }
}

TEST(ReversePosterior, EqualLevelsKeepTheToken) {
  const auto x_hat = Categorical::uniform(3);
  const auto p = duo::reverse_posterior(1, x_hat, 0.6, 0.6);
  EXPECT_NEAR(p[1], 1.0, 1e-15);
}

TEST(ReversePosterior, RejectsBadLevels) {
  const auto x_hat = Categorical::uniform(3);
  EXPECT_EQ(kind_of([&] { duo::reverse_posterior(0, x_hat, 0.3, 0.5); }), ErrorKind::kOrdering);
  EXPECT_EQ(kind_of([&] { duo::reverse_posterior(3, x_hat, 0.5, 0.3); }), ErrorKind::kIndex);
  EXPECT_EQ(kind_of([] { duo::reverse_posterior(0, Categorical::one_hot(1, 3), 1.0, 1.0); }),
            ErrorKind::kOrdering);
}

TEST(GaussianForward, MomentsMatch) {
  duo::CounterRng rng(3);
  const std::size_t n = 100000;
  const double a = 0.6;
  double m0 = 0.0, m1 = 0.0, v1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto w = duo::gaussian_forward_sample(0, a, 2, rng);
    m0 += w[0];
    m1 += w[1];
    v1 += w[1] * w[1];
  }
  m0 /= n;
  m1 /= n;
  v1 = v1 / n - m1 * m1;
  EXPECT_NEAR(m0, a, 4 * 0.8 / std::sqrt(n));
  EXPECT_NEAR(m1, 0.0, 4 * 0.8 / std::sqrt(n));
  EXPECT_NEAR(v1, 0.64, 0.02);
}

TEST(Ddim, OptimalPredictionFollowsTheStraightLine) {
  duo::CounterRng rng(4);
  const std::vector<double> x{0.0, 1.0, 0.0};
  std::vector<double> eps(3);
  for (double& e : eps) e = rng.normal();
  const double at = 0.3, as = 0.7;
  std::vector<double> wt(3), ws_expect(3);
  for (int k = 0; k < 3; ++k) {
    wt[k] = at * x[k] + duo::sigma_tilde(at) * eps[k];
    ws_expect[k] = as * x[k] + duo::sigma_tilde(as) * eps[k];
  }
  const auto ws = duo::ddim_step(wt, x, as, at);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(ws[k], ws_expect[k], 1e-14);
  EXPECT_EQ(duo::ddim_step(wt, x, at, at), wt);
  EXPECT_EQ(kind_of([&] { duo::ddim_step(wt, x, 0.2, 0.3); }), ErrorKind::kOrdering);
  EXPECT_EQ(kind_of([&] { duo::ddim_step(wt, x, 1.0, 1.0); }), ErrorKind::kSingularity);
}

TEST(ArgmaxPushforward, VertexMeanMatchesTransform) {
  for (std::size_t K : {3u, 10u}) {
    for (double a : {0.2, 0.6}) {
      std::vector<double> mean(K, 0.0);
      mean[0] = a;
      const auto p = duo::argmax_pushforward(mean, duo::sigma_tilde(a));
      const auto q = duo::discrete_marginal(0, duo::transform(a, K), K);
      EXPECT_LT(duo::tv_distance(p, q), 1e-8);
    }
  }
}

TEST(ArgmaxPushforward, MatchesMonteCarlo) {
  const std::vector<double> mean{0.3, -0.2, 0.5, 0.0};
  const double sigma = 0.7;
  const auto p = duo::argmax_pushforward(mean, sigma);
  duo::CounterRng rng(21);
  const std::size_t n = 200000;
  std::vector<double> counts(4, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w(mean);
    for (double& v : w) v += sigma * rng.normal();
    counts[duo::argmax(w)] += 1.0 / n;
  }
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(counts[k], p[k], 4 * std::sqrt(p[k] * (1 - p[k]) / n));
}

}  // namespace
