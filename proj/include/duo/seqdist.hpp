#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "duo/categorical.hpp"
#include "duo/error.hpp"

namespace duo {

inline constexpr std::size_t kMaxEnumerable = 1000000;

/// 0.5 * sum |p_i - q_i|.
inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  detail::require(p.size() == q.size(), ErrorKind::kShape, "tv_distance dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::fabs(p[i] - q[i]);
  return 0.5 * acc;
}

inline double tv_distance(const Categorical& p, const Categorical& q) { return tv_distance(p.probs(), q.probs()); }

/// K^L, or a size error past the enumeration cap.
inline std::size_t sequence_space_size(std::size_t K, std::size_t L) {
  std::size_t n = 1;
  for (std::size_t l = 0; l < L; ++l) {
    detail::require(n <= kMaxEnumerable / K, ErrorKind::kSize, "K^L exceeds 1e6");
    n *= K;
  }
  return n;
}

/// Base-K index with position 0 most significant.
inline std::size_t sequence_index(const TokenSeq& seq, std::size_t K) {
  std::size_t idx = 0;
  for (Token z : seq) {
    detail::require(z < K, ErrorKind::kIndex, "token out of range");
    idx = idx * K + z;
  }
  return idx;
}

/// Empirical law over K^L sequences.
inline std::vector<double> empirical_distribution(const std::vector<TokenSeq>& seqs, std::size_t K, std::size_t L) {
  std::vector<double> p(sequence_space_size(K, L), 0.0);
  detail::require(!seqs.empty(), ErrorKind::kParameter, "no sequences");
  for (const auto& s : seqs) {
    detail::require(s.size() == L, ErrorKind::kShape, "sequence length mismatch");
    p[sequence_index(s, K)] += 1.0;
  }
  for (double& v : p) v /= static_cast<double>(seqs.size());
  return p;
}

/// Mean over positions of the entropy (nats) of the pooled per-position unigram law.
inline double mean_unigram_entropy(const std::vector<TokenSeq>& seqs, std::size_t K) {
  detail::require(!seqs.empty(), ErrorKind::kParameter, "no sequences");
  const std::size_t L = seqs.front().size();
  double total = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<double> c(K, 0.0);
    for (const auto& s : seqs) c[s[l]] += 1.0;
    double h = 0.0;
    for (double v : c) {
      if (v > 0.0) {
        const double p = v / static_cast<double>(seqs.size());
        h -= p * std::log(p);
      }
    }
    total += h;
  }
  return total / static_cast<double>(L);
}

}  // namespace duo
