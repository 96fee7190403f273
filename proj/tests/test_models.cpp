#include <cmath>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "duo/models.hpp"
#include "duo/verify.hpp"
#include "support.hpp"

namespace {

using duo::ErrorKind;
using duo::Matrix;
using duo::TokenSeq;
using duo::testing::kind_of;

void expect_row_stochastic(const Matrix& m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) {
      EXPECT_GE(m(r, c), 0.0);
      s += m(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

Matrix random_matrix(std::size_t r, std::size_t c, duo::CounterRng& rng) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.normal();
  return m;
}

TEST(OptimalDenoiser, ReturnsTheTargetRows) {
  const TokenSeq x{2, 0, 1};
  const auto d = duo::optimal_denoiser(x, 3);
  const auto out = d.eval_tokens({0, 0, 0}, 0.5, 0.5);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(out(l, x[l]), 1.0);
  EXPECT_EQ(kind_of([&] { d.eval_tokens({0, 0}, 0.5, 0.5); }), ErrorKind::kShape);
}

constexpr auto kAll = duo::BayesConditioning::kAllPositions;

TEST(BayesDenoiser, TwoSequenceHandComputedPosterior) {
  // q(0|0) = 2/3, q(0|other) = 1/6 at alpha = 1/2, so weights 1/9 and 1/36.
  const std::vector<TokenSeq> corpus{{0, 1}, {2, 1}};
  const auto out = duo::bayes_denoiser_eval(corpus, 3, {0, 0}, 0.5, nullptr, kAll);
  EXPECT_FALSE(out.underflow_fallback);
  EXPECT_NEAR(out.rows(0, 0), 0.8, 1e-14);
  EXPECT_NEAR(out.rows(0, 2), 0.2, 1e-14);
  EXPECT_NEAR(out.rows(1, 1), 1.0, 1e-14);
}

TEST(BayesDenoiser, OtherPositionsIgnoreTheOwnToken) {
  // Position 0 sees only z_1 = 0, which both sequences miss equally.
  const std::vector<TokenSeq> corpus{{0, 1}, {2, 1}};
  const auto out = duo::bayes_denoiser_eval(corpus, 3, {0, 0}, 0.5);
  EXPECT_NEAR(out.rows(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(out.rows(0, 2), 0.5, 1e-14);
  EXPECT_NEAR(out.rows(1, 1), 1.0, 1e-14);
  const duo::BayesDenoiser single({{0}, {1}, {1}, {2}}, 3);
  for (duo::Token z = 0; z < 3; ++z) {
    const auto row = single.eval_tokens({z}, 0.5, 0.7);
    EXPECT_NEAR(row(0, 0), 0.25, 1e-15);
    EXPECT_NEAR(row(0, 1), 0.5, 1e-15);
    EXPECT_NEAR(row(0, 2), 0.25, 1e-15);
  }
}

TEST(BayesDenoiser, LimitsAtBothEnds) {
  const std::vector<TokenSeq> corpus{{0, 1}, {0, 2}, {1, 2}, {0, 1}};
  const duo::BayesDenoiser bayes(corpus, 3, kAll);
  const auto clean = bayes.eval_tokens({0, 2}, 0.0, 1.0);
  EXPECT_NEAR(clean(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(clean(1, 2), 1.0, 1e-14);
  const auto noise = bayes.eval_tokens({2, 0}, 1.0, 0.0);
  EXPECT_NEAR(noise(0, 0), 0.75, 1e-14);
  EXPECT_NEAR(noise(1, 1), 0.5, 1e-14);
  const auto alone = duo::bayes_denoiser_eval({{1, 1}}, 3, {0, 2}, 0.3);
  EXPECT_NEAR(alone.rows(0, 1), 1.0, 1e-15);

  const duo::BayesDenoiser others(corpus, 3);
  const auto c = others.eval_tokens({0, 2}, 0.0, 1.0);
  EXPECT_NEAR(c(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(c(0, 1), 0.5, 1e-14);
  EXPECT_NEAR(c(1, 1), 2.0 / 3.0, 1e-14);
  EXPECT_NEAR(c(1, 2), 1.0 / 3.0, 1e-14);
  const auto n = others.eval_tokens({2, 0}, 1.0, 0.0);
  EXPECT_NEAR(n(0, 0), 0.75, 1e-14);
  EXPECT_NEAR(n(1, 1), 0.5, 1e-14);
}

TEST(BayesDenoiser, UnreachableInputFallsBackToTheCorpusLaw) {
  const std::vector<TokenSeq> corpus{{0, 1}, {1, 1}};
  for (auto mode : {kAll, duo::BayesConditioning::kOtherPositions}) {
    const auto out = duo::bayes_denoiser_eval(corpus, 3, {2, 2}, 1.0, nullptr, mode);
    EXPECT_TRUE(out.underflow_fallback);
    EXPECT_NEAR(out.rows(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(out.rows(1, 1), 1.0, 1e-15);
  }
}

TEST(FactorizedBayes, MatchesFullEnumerationOnProductLaw) {
  const std::vector<duo::Categorical> marg{duo::Categorical({0.5, 0.3, 0.2}), duo::Categorical({0.1, 0.1, 0.8})};
  std::vector<TokenSeq> corpus;
  std::vector<double> weights;
  for (duo::Token a = 0; a < 3; ++a) {
    for (duo::Token b = 0; b < 3; ++b) {
      corpus.push_back({a, b});
      weights.push_back(marg[0][a] * marg[1][b]);
    }
  }
  for (auto mode : {kAll, duo::BayesConditioning::kOtherPositions}) {
    const duo::FactorizedBayesDenoiser fb(marg, mode);
    const auto got = fb.eval_tokens({1, 0}, 0.4, 0.4);
    const auto want = duo::bayes_denoiser_eval(corpus, 3, {1, 0}, 0.4, &weights, mode);
    for (std::size_t i = 0; i < got.data.size(); ++i) EXPECT_NEAR(got.data[i], want.rows.data[i], 1e-14);
  }
}

TEST(Tabular, RowsAreStochasticAndBinned) {
  duo::CounterRng rng(1);
  duo::TabularDenoiser tab(4, 3);
  for (double& v : tab.params()) v = rng.normal();
  expect_row_stochastic(tab.eval_tokens({0, 1, 2, 1}, 0.3, 0.0));
  EXPECT_EQ(tab.bin(0.0), 0u);
  EXPECT_EQ(tab.bin(0.2499), 0u);
  EXPECT_EQ(tab.bin(0.25), 1u);
  EXPECT_EQ(tab.bin(1.0), 3u);
  EXPECT_FALSE(tab.accepts_simplex());
  EXPECT_EQ(kind_of([&] { tab.eval_simplex(Matrix(1, 3, 1.0 / 3), 0.5); }), ErrorKind::kCapability);
  EXPECT_EQ(kind_of([&] { tab.eval_tokens({3}, 0.5, 0.0); }), ErrorKind::kIndex);
}

TEST(Tabular, VjpMatchesCentralDifferences) {
  duo::CounterRng rng(2);
  duo::TabularDenoiser tab(3, 4);
  for (double& v : tab.params()) v = rng.normal();
  const auto r = duo::gradient_check(tab, duo::token_probe_loss({0, 3, 3, 1}, 0.7, random_matrix(4, 4, rng)));
  EXPECT_TRUE(r.pass) << r.statistic;
}

TEST(Mlp, RowsAreStochastic) {
  duo::CounterRng rng(3);
  const auto mlp = duo::MlpDenoiser::random(5, 7, 1.0, rng);
  EXPECT_EQ(mlp.params().size(), duo::MlpDenoiser::count(5, 7));
  expect_row_stochastic(mlp.eval_tokens({0, 4, 2}, 0.1, 0.0));
  Matrix soft(2, 5, 0.2);
  expect_row_stochastic(mlp.eval_simplex(soft, 0.9));
}

TEST(Mlp, VjpMatchesCentralDifferencesForBothInputKinds) {
  duo::CounterRng rng(4);
  auto mlp = duo::MlpDenoiser::random(4, 6, 1.5, rng);
  for (double& v : mlp.params()) v += 0.1 * rng.normal();
  const auto a = duo::gradient_check(mlp, duo::token_probe_loss({1, 0, 3}, 0.4, random_matrix(3, 4, rng)));
  EXPECT_TRUE(a.pass) << a.statistic;
  Matrix rows(2, 4);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t k = 0; k < 4; ++k) rows(l, k) = rng.uniform();
    duo::softmax_inplace(rows.row(l), 4);
  }
  const auto b = duo::gradient_check(mlp, duo::simplex_probe_loss(rows, 0.6, random_matrix(2, 4, rng)));
  EXPECT_TRUE(b.pass) << b.statistic;
}

TEST(Vjp, ZeroUpstreamGivesZeroGradient) {
  duo::CounterRng rng(5);
  const auto mlp = duo::MlpDenoiser::random(3, 4, 1.0, rng);
  for (double g : mlp.vjp_tokens({0, 1}, 0.5, Matrix(2, 3, 0.0))) EXPECT_EQ(g, 0.0);
  const duo::TabularDenoiser tab(2, 3);
  for (double g : tab.vjp_tokens({0, 1}, 0.5, Matrix(2, 3, 0.0))) EXPECT_EQ(g, 0.0);
}

TEST(Ema, UpdateIsAConvexCombination) {
  duo::EmaState s{0.9, {1.0, -2.0}};
  s = duo::ema_update(std::move(s), {3.0, 0.0});
  EXPECT_NEAR(s.shadow[0], 1.2, 1e-15);
  EXPECT_NEAR(s.shadow[1], -1.8, 1e-15);
  EXPECT_EQ(kind_of([] { duo::ema_update({0.5, {1.0}}, {1.0, 2.0}); }), ErrorKind::kShape);
}

TEST(Kl, CategoricalValues) {
  const duo::Categorical p({0.5, 0.5}), q({0.25, 0.75});
  EXPECT_NEAR(duo::kl_categorical(p, q), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
  EXPECT_EQ(duo::kl_categorical(p, p), 0.0);
  EXPECT_EQ(duo::kl_categorical(duo::Categorical::one_hot(0, 2), duo::Categorical({1.0, 0.0})), 0.0);
}

TEST(Checkpoint, RoundTripPreservesParametersBitForBit) {
  duo::CounterRng rng(6);
  auto mlp = duo::MlpDenoiser::random(4, 5, 1.0, rng);
  duo::TabularDenoiser tab(3, 4);
  for (double& v : tab.params()) v = rng.normal();
  for (const duo::TrainableDenoiser* m : {static_cast<duo::TrainableDenoiser*>(&mlp), static_cast<duo::TrainableDenoiser*>(&tab)}) {
    const std::string path = duo::testing::scratch_path("m.bin");
    duo::save_model(*m, path);
    const auto back = duo::load_model(path);
    EXPECT_EQ(back->kind(), m->kind());
    EXPECT_EQ(back->params(), m->params());
    EXPECT_EQ(duo::params_checksum(back->params()), duo::params_checksum(m->params()));
    const auto a = back->eval_tokens({0, 3}, 0.5, 0.0);
    const auto b = m->eval_tokens({0, 3}, 0.5, 0.0);
    EXPECT_EQ(a.data, b.data);
  }
}

TEST(Checkpoint, RejectsForeignFiles) {
  const std::string path = duo::testing::scratch_path("junk.bin");
  { std::ofstream(path) << "JUNKJUNKJUNK"; }
  EXPECT_THROW(duo::load_model(path), duo::Error);
  EXPECT_EQ(kind_of([&] { duo::load_model(path + ".missing"); }), ErrorKind::kIo);
}

TEST(Checksum, SensitiveToEveryBit) {
  std::vector<double> p{0.1, 0.2};
  const auto a = duo::params_checksum(p);
  p[1] = std::nextafter(p[1], 1.0);
  EXPECT_NE(a, duo::params_checksum(p));
}

}  // namespace
