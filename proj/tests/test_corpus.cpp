#include <cmath>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "duo/corpus.hpp"
#include "support.hpp"

namespace {

using duo::ErrorKind;
using duo::Token;
using duo::TokenSeq;
using duo::testing::kind_of;
using duo::testing::scratch_path;

// Left eigenvector for eigenvalue 1 by Gaussian elimination on (P^T - I) with a sum row.
std::vector<double> solve_stationary(const duo::Matrix& P) {
  const std::size_t K = P.rows;
  std::vector<std::vector<double>> A(K, std::vector<double>(K + 1, 0.0));
  for (std::size_t r = 0; r + 1 < K; ++r) {
    for (std::size_t c = 0; c < K; ++c) A[r][c] = P(c, r) - (r == c ? 1.0 : 0.0);
  }
  for (std::size_t c = 0; c < K; ++c) A[K - 1][c] = 1.0;
  A[K - 1][K] = 1.0;
  for (std::size_t c = 0; c < K; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < K; ++r) {
      if (std::fabs(A[r][c]) > std::fabs(A[piv][c])) piv = r;
    }
    std::swap(A[c], A[piv]);
    for (std::size_t r = 0; r < K; ++r) {
      if (r == c) continue;
      const double f = A[r][c] / A[c][c];
      for (std::size_t k = c; k <= K; ++k) A[r][k] -= f * A[c][k];
    }
  }
  std::vector<double> pi(K);
  for (std::size_t k = 0; k < K; ++k) pi[k] = A[k][K] / A[k][k];
  return pi;
}

TEST(Markov, FixedSeedIsReproducible) {
  EXPECT_EQ(duo::generate_markov(5, 7, 40, 0.5, 3), duo::generate_markov(5, 7, 40, 0.5, 3));
  EXPECT_FALSE(duo::generate_markov(5, 7, 40, 0.5, 3) == duo::generate_markov(5, 7, 40, 0.5, 4));
}

TEST(Markov, TransitionRowsAreDistributions) {
  const auto mc = duo::generate_markov_chain(6, 4, 10, 0.3, 1);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 6; ++c) s += mc.transition(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  mc.corpus.validate();
}

TEST(Markov, StartsFromTheStationaryLaw) {
  const auto mc = duo::generate_markov_chain(4, 8, 512, 1.0, 9);
  const auto pi = solve_stationary(mc.transition);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(mc.initial[k], pi[k], 1e-12);
}

TEST(Markov, UnigramFrequenciesMatchTheStationaryLaw) {
  const auto mc = duo::generate_markov_chain(4, 8, 512, 1.0, 10);
  const auto pi = solve_stationary(mc.transition);
  // Sequences are independent, so the spread of per-sequence frequencies gives sigma.
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<double> f;
    for (const auto& s : mc.corpus.seqs) {
      double c = 0.0;
      for (Token z : s) c += z == k;
      f.push_back(c / 8.0);
    }
    double mean = 0.0, ss = 0.0;
    for (double v : f) mean += v / f.size();
    for (double v : f) ss += (v - mean) * (v - mean);
    const double sigma = std::sqrt(ss / (f.size() - 1) / f.size());
    EXPECT_LE(std::fabs(mean - pi[k]), 3.0 * sigma + 1e-12) << "token " << k;
  }
}

TEST(Markov, HighConcentrationIsNearlyUniform) {
  const auto mc = duo::generate_markov_chain(4, 2, 1, 1e6, 2);
  for (double v : mc.transition.data) EXPECT_NEAR(v, 0.25, 0.01);
  EXPECT_EQ(kind_of([] { duo::generate_markov(4, 2, 1, 0.0, 2); }), ErrorKind::kParameter);
  EXPECT_EQ(kind_of([] { duo::generate_markov(1, 2, 1, 1.0, 2); }), ErrorKind::kParameter);
}

TEST(Pack, SeparatesDocumentsAndDropsTheRemainder) {
  const auto c = duo::pack({{0, 1}, {2}, {1, 1, 0}}, 4, 3);
  // stream: 0 1 3 2 3 1 1 0 3
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.seqs[0], (TokenSeq{0, 1, 3}));
  EXPECT_EQ(c.seqs[1], (TokenSeq{2, 3, 1}));
  EXPECT_EQ(c.seqs[2], (TokenSeq{1, 0, 3}));
  EXPECT_EQ(duo::pack({{0}}, 4, 3).size(), 0u);
  EXPECT_EQ(kind_of([] { duo::pack({{4}}, 4, 2); }), ErrorKind::kIndex);
  EXPECT_EQ(duo::unpack(c), (std::vector<Token>{0, 1, 3, 2, 3, 1, 1, 0, 3}));
}

TEST(CorpusFile, RoundTrip) {
  const auto c = duo::generate_markov(7, 5, 20, 0.8, 5);
  const auto path = scratch_path("c.txt");
  duo::save_corpus(c, path);
  EXPECT_EQ(duo::load_corpus(path), c);
}

TEST(CorpusFile, EmptyCorpusIsHeaderOnly) {
  const auto path = scratch_path("empty.txt");
  duo::save_corpus(duo::Corpus{3, 4, {}, {}}, path);
  std::ifstream is(path);
  std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  EXPECT_EQ(all, "duo-corpus v1 K=3 L=4 n=0\n");
  EXPECT_EQ(duo::load_corpus(path).size(), 0u);
}

TEST(CorpusFile, ParseErrorsNameTheLine) {
  const auto path = scratch_path("bad.txt");
  { std::ofstream(path) << "duo-corpus v1 K=3 L=2 n=2\n0 1\n2 3\n"; }
  try {
    duo::load_corpus(path);
    FAIL() << "expected a parse error";
  } catch (const duo::ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  { std::ofstream(path) << "duo-corpus v1 K=3 L=2 n=2\n0 1\n"; }
  EXPECT_EQ(kind_of([&] { duo::load_corpus(path); }), ErrorKind::kParse);
  { std::ofstream(path) << "corpus K=3\n"; }
  EXPECT_EQ(kind_of([&] { duo::load_corpus(path); }), ErrorKind::kParse);
  { std::ofstream(path) << "duo-corpus v1 K=3 L=2 n=1\n0 1 2\n"; }
  EXPECT_EQ(kind_of([&] { duo::load_corpus(path); }), ErrorKind::kParse);
  EXPECT_EQ(kind_of([&] { duo::load_corpus(path + ".missing"); }), ErrorKind::kIo);
}

TEST(Alphabet, RoundTripAndEncoding) {
  const std::map<Token, std::string> alpha{{0, "a"}, {1, "b"}, {2, " "}};
  const auto path = scratch_path("alpha.tsv");
  duo::save_alphabet(alpha, path);
  EXPECT_EQ(duo::load_alphabet(path, 4), alpha);
  EXPECT_EQ(duo::encode_chars("ab ba", alpha), (std::vector<Token>{0, 1, 2, 1, 0}));
  EXPECT_EQ(kind_of([&] { duo::encode_chars("abc", alpha); }), ErrorKind::kParse);
  EXPECT_EQ(kind_of([&] { duo::load_alphabet(path, 2); }), ErrorKind::kParse);
}

}  // namespace
