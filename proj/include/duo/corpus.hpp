#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "duo/categorical.hpp"
#include "duo/error.hpp"
#include "duo/io.hpp"
#include "duo/rng.hpp"

namespace duo {

/// Fixed-length token sequences over a K-letter vocabulary.
struct Corpus {
  std::size_t K = 0;
  std::size_t L = 0;
  std::vector<TokenSeq> seqs;
  std::map<Token, std::string> alphabet;  // optional id -> character

  std::size_t size() const { return seqs.size(); }

  void validate() const {
    detail::require(K >= 2, ErrorKind::kParameter, "corpus needs K >= 2");
    for (const auto& s : seqs) {
      detail::require(s.size() == L, ErrorKind::kShape, "corpus sequence length mismatch");
      check_tokens(s, K);
    }
  }

  bool operator==(const Corpus& o) const { return K == o.K && L == o.L && seqs == o.seqs; }
};

/// Markov chain corpus. Each row of the transition table is a symmetric
/// Dirichlet(concentration) draw built from Gamma variates, and every chain
/// starts from the table's stationary law, so each position has that law.
/// The rng is CounterRng (SplitMix64 counter) seeded with `seed`.
struct MarkovCorpus {
  Corpus corpus;
  std::vector<double> initial;  // stationary law of `transition`
  Matrix transition;
};

/// Stationary law by power iteration on the lazy chain (P + I) / 2 from uniform.
inline std::vector<double> stationary_law(const Matrix& P) {
  const std::size_t K = P.rows;
  std::vector<double> pi(K, 1.0 / static_cast<double>(K)), next(K);
  for (int it = 0; it < 1000000; ++it) {
    for (std::size_t j = 0; j < K; ++j) next[j] = 0.5 * pi[j];
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < K; ++j) next[j] += 0.5 * pi[i] * P(i, j);
    }
    double diff = 0.0, s = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      diff += std::fabs(next[j] - pi[j]);
      s += next[j];
    }
    for (std::size_t j = 0; j < K; ++j) pi[j] = next[j] / s;
    if (diff < 1e-15) break;
  }
  return pi;
}

inline MarkovCorpus generate_markov_chain(std::size_t K, std::size_t L, std::size_t n, double concentration,
                                          std::uint64_t seed) {
  detail::require(K >= 2 && L >= 1 && n >= 1, ErrorKind::kParameter, "generate_markov needs K >= 2, L >= 1, n >= 1");
  detail::require(concentration > 0.0, ErrorKind::kParameter, "Dirichlet concentration must be positive");
  CounterRng rng(seed);
  auto dirichlet = [&](double* out) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += (out[k] = sample_gamma(concentration, rng));
    for (std::size_t k = 0; k < K; ++k) out[k] /= s;
  };
  MarkovCorpus mc{{K, L, {}, {}}, std::vector<double>(K), Matrix(K, K)};
  for (std::size_t r = 0; r < K; ++r) dirichlet(mc.transition.row(r));
  mc.initial = stationary_law(mc.transition);
  mc.corpus.seqs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    TokenSeq s(L);
    const double* law = mc.initial.data();
    for (std::size_t l = 0; l < L; ++l) {
      const double u = rng.uniform();
      double acc = 0.0;
      std::size_t k = 0;
      for (; k + 1 < K; ++k) {
        acc += law[k];
        if (u < acc) break;
      }
      s[l] = static_cast<Token>(k);
      law = mc.transition.row(k);
    }
    mc.corpus.seqs.push_back(std::move(s));
  }
  return mc;
}

inline Corpus generate_markov(std::size_t K, std::size_t L, std::size_t n, double concentration, std::uint64_t seed) {
  return generate_markov_chain(K, L, n, concentration, seed).corpus;
}

/// Concatenates docs with separator K - 1 after each doc and wraps into
/// length-L rows; the trailing partial row is dropped.
inline Corpus pack(const std::vector<std::vector<Token>>& docs, std::size_t K, std::size_t L) {
  detail::require(K >= 2 && L >= 1, ErrorKind::kParameter, "pack needs K >= 2 and L >= 1");
  const Token sep = static_cast<Token>(K - 1);
  std::vector<Token> stream;
  for (const auto& d : docs) {
    for (Token z : d) {
      detail::require(z < K, ErrorKind::kIndex, "token " + std::to_string(z) + " out of range");
      stream.push_back(z);
    }
    stream.push_back(sep);
  }
  Corpus c{K, L, {}, {}};
  for (std::size_t i = 0; i + L <= stream.size(); i += L) c.seqs.emplace_back(stream.begin() + i, stream.begin() + i + L);
  return c;
}

/// Row-major concatenation of the packed stream.
inline std::vector<Token> unpack(const Corpus& c) {
  std::vector<Token> out;
  out.reserve(c.size() * c.L);
  for (const auto& s : c.seqs) out.insert(out.end(), s.begin(), s.end());
  return out;
}

inline void save_corpus(const Corpus& c, const std::string& path) {
  c.validate();
  auto os = io::open_out(path, false);
  os << "duo-corpus v1 K=" << c.K << " L=" << c.L << " n=" << c.size() << "\n";
  for (const auto& s : c.seqs) {
    for (std::size_t l = 0; l < s.size(); ++l) os << (l ? " " : "") << s[l];
    os << "\n";
  }
  detail::require(static_cast<bool>(os), ErrorKind::kIo, "failed writing " + path);
}

namespace detail {

inline std::size_t parse_count(const std::string& tok, const std::string& key, std::size_t line) {
  if (tok.rfind(key, 0) != 0) throw ParseError(line, "expected " + key + "<n>, got '" + tok + "'");
  const std::string v = tok.substr(key.size());
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ParseError(line, "bad count in '" + tok + "'");
  }
  return static_cast<std::size_t>(std::stoull(v));
}

}  // namespace detail

inline Corpus load_corpus(const std::string& path) {
  auto is = io::open_in(path, false);
  std::string line;
  if (!std::getline(is, line)) throw ParseError(1, "missing header");
  std::istringstream hs(line);
  std::string magic, version, kt, lt, nt, extra;
  hs >> magic >> version >> kt >> lt >> nt;
  if (magic != "duo-corpus" || version != "v1") throw ParseError(1, "header must start with 'duo-corpus v1'");
  if (hs >> extra) throw ParseError(1, "trailing header field '" + extra + "'");
  Corpus c;
  c.K = detail::parse_count(kt, "K=", 1);
  c.L = detail::parse_count(lt, "L=", 1);
  const std::size_t n = detail::parse_count(nt, "n=", 1);
  if (c.K < 2) throw ParseError(1, "K must be >= 2");
  std::size_t ln = 1;
  while (std::getline(is, line)) {
    ++ln;
    if (line.empty() && c.seqs.size() == n) continue;
    std::istringstream ls(line);
    TokenSeq s;
    std::string tok;
    while (ls >> tok) {
      if (tok.find_first_not_of("0123456789") != std::string::npos) throw ParseError(ln, "bad token '" + tok + "'");
      const unsigned long long v = std::stoull(tok);
      if (v >= c.K) throw ParseError(ln, "token " + tok + " >= K=" + std::to_string(c.K));
      s.push_back(static_cast<Token>(v));
    }
    if (s.size() != c.L) {
      throw ParseError(ln, "expected " + std::to_string(c.L) + " tokens, got " + std::to_string(s.size()));
    }
    c.seqs.push_back(std::move(s));
  }
  if (c.seqs.size() != n) {
    throw ParseError(ln, "header declares n=" + std::to_string(n) + " but file has " + std::to_string(c.seqs.size()));
  }
  return c;
}

/// Alphabet file: one "id<TAB>character" per line.
inline void save_alphabet(const std::map<Token, std::string>& alphabet, const std::string& path) {
  auto os = io::open_out(path, false);
  for (const auto& [id, ch] : alphabet) os << id << "\t" << ch << "\n";
}

inline std::map<Token, std::string> load_alphabet(const std::string& path, std::size_t K) {
  auto is = io::open_in(path, false);
  std::map<Token, std::string> out;
  std::string line;
  std::size_t ln = 0;
  while (std::getline(is, line)) {
    ++ln;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(ln, "expected id<TAB>character");
    const std::string id = line.substr(0, tab);
    if (id.empty() || id.find_first_not_of("0123456789") != std::string::npos) throw ParseError(ln, "bad id '" + id + "'");
    const unsigned long long v = std::stoull(id);
    if (v >= K) throw ParseError(ln, "id " + id + " >= K=" + std::to_string(K));
    if (!out.emplace(static_cast<Token>(v), line.substr(tab + 1)).second) throw ParseError(ln, "duplicate id " + id);
  }
  return out;
}

/// Character-level encoding against an alphabet; unknown characters are a parse error.
inline std::vector<Token> encode_chars(const std::string& text, const std::map<Token, std::string>& alphabet) {
  std::map<std::string, Token> inv;
  for (const auto& [id, ch] : alphabet) inv.emplace(ch, id);
  std::vector<Token> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto it = inv.find(std::string(1, text[i]));
    if (it == inv.end()) throw ParseError(1, "character at offset " + std::to_string(i) + " not in alphabet");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace duo
