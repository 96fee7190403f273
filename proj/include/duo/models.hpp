#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "duo/categorical.hpp"
#include "duo/error.hpp"
#include "duo/io.hpp"
#include "duo/rng.hpp"

namespace duo {

inline constexpr double kProbFloor = 1e-30;

/// L x K matrix whose rows lie on the simplex.
using DenoiserOutput = Matrix;

inline void check_row_stochastic([[maybe_unused]] const Matrix& rows) {
#ifndef NDEBUG
  for (std::size_t r = 0; r < rows.rows; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < rows.cols; ++c) {
      detail::require(rows(r, c) >= 0.0, ErrorKind::kState, "denoiser output negative");
      sum += rows(r, c);
    }
    detail::require(std::fabs(sum - 1.0) <= 1e-10, ErrorKind::kState, "denoiser output row does not sum to 1");
  }
#endif
}

inline Matrix one_hot_rows(const TokenSeq& z, std::size_t K) {
  Matrix m(z.size(), K, 0.0);
  for (std::size_t l = 0; l < z.size(); ++l) {
    detail::require(z[l] < K, ErrorKind::kIndex, "token out of range");
    m(l, z[l]) = 1.0;
  }
  return m;
}

/// Clean-data predictor x_theta(z, t). `alpha` is the discrete level at t,
/// which only posterior-exact denoisers read.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual DenoiserOutput eval_tokens(const TokenSeq& z, double t, double alpha) const = 0;
  virtual bool accepts_simplex() const { return false; }
  virtual DenoiserOutput eval_simplex(const Matrix& /*rows*/, double /*t*/) const {
    throw Error(ErrorKind::kCapability, "denoiser does not accept simplex inputs");
  }
};

enum class ModelKind : std::uint64_t { kTabular = 1, kMlp = 2 };

/// Denoiser with a flat parameter vector and a vector-Jacobian product.
class TrainableDenoiser : public Denoiser {
 public:
  virtual ModelKind kind() const = 0;
  virtual std::vector<double>& params() = 0;
  virtual const std::vector<double>& params() const = 0;
  /// d <upstream, output> / d params for one-hot inputs z.
  virtual std::vector<double> vjp_tokens(const TokenSeq& z, double t, const Matrix& upstream) const = 0;
  virtual std::vector<double> vjp_simplex(const Matrix& /*rows*/, double /*t*/, const Matrix& /*upstream*/) const {
    throw Error(ErrorKind::kCapability, "denoiser has no simplex vjp");
  }
  virtual std::unique_ptr<TrainableDenoiser> clone() const = 0;
};

/// x_hat = onehot(x_seq) regardless of input.
class OptimalDenoiser : public Denoiser {
 public:
  OptimalDenoiser(TokenSeq x, std::size_t K) : x_(std::move(x)), K_(K) { check_tokens(x_, K_); }

  std::size_t vocab_size() const override { return K_; }
  bool accepts_simplex() const override { return true; }
  DenoiserOutput eval_tokens(const TokenSeq& z, double, double) const override { return rows(z.size()); }
  DenoiserOutput eval_simplex(const Matrix& r, double) const override { return rows(r.rows); }
  const TokenSeq& target() const { return x_; }

 private:
  DenoiserOutput rows(std::size_t L) const {
    detail::require(L == x_.size(), ErrorKind::kShape, "optimal denoiser length mismatch");
    return one_hot_rows(x_, K_);
  }

  TokenSeq x_;
  std::size_t K_;
};

inline OptimalDenoiser optimal_denoiser(const TokenSeq& x, std::size_t K) { return OptimalDenoiser(x, K); }

/// Uniform rows everywhere.
class UniformDenoiser : public Denoiser {
 public:
  explicit UniformDenoiser(std::size_t K) : K_(K) {}
  std::size_t vocab_size() const override { return K_; }
  bool accepts_simplex() const override { return true; }
  DenoiserOutput eval_tokens(const TokenSeq& z, double, double) const override {
    return Matrix(z.size(), K_, 1.0 / static_cast<double>(K_));
  }
  DenoiserOutput eval_simplex(const Matrix& r, double) const override {
    return Matrix(r.rows, K_, 1.0 / static_cast<double>(K_));
  }

 private:
  std::size_t K_;
};

struct BayesOutput {
  DenoiserOutput rows;
  bool underflow_fallback = false;
};

/// Which noisy tokens the posterior for position l conditions on.
/// kOtherPositions gives p(x_l | z_{-l}), the prediction for which the
/// plug-in reverse step and the NELBO integrand are exact for the corpus law;
/// kAllPositions gives the full posterior mean E[x_l | z].
enum class BayesConditioning { kOtherPositions, kAllPositions };

/// Posterior mean of each position under the empirical corpus law and the
/// uniform-state forward marginal at level alpha.
inline BayesOutput bayes_denoiser_eval(const std::vector<TokenSeq>& corpus, std::size_t K, const TokenSeq& z,
                                       double alpha, const std::vector<double>* counts = nullptr,
                                       BayesConditioning mode = BayesConditioning::kOtherPositions) {
  detail::require(!corpus.empty(), ErrorKind::kParameter, "bayes denoiser needs a nonempty corpus");
  detail::require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::kDomain, "alpha outside [0,1]");
  const std::size_t L = z.size();
  const double Kd = static_cast<double>(K);
  const double log_hit = std::log(alpha + (1.0 - alpha) / Kd);
  const double log_miss = std::log((1.0 - alpha) / Kd);
  for (const auto& s : corpus) {
    detail::require(s.size() == L, ErrorKind::kShape, "corpus sequence length mismatch");
  }
  BayesOutput out{Matrix(L, K, 0.0), false};
  std::vector<double> logw(corpus.size());
  auto add_rows = [&](std::size_t skip) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < corpus.size(); ++n) {
      double lw = counts ? std::log((*counts)[n]) : 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        if (l != skip) lw += (corpus[n][l] == z[l]) ? log_hit : log_miss;
      }
      logw[n] = lw;
      mx = std::fmax(mx, lw);
    }
    if (!std::isfinite(mx)) {
      out.underflow_fallback = true;
      for (std::size_t n = 0; n < corpus.size(); ++n) logw[n] = counts ? std::log((*counts)[n]) : 0.0;
      mx = *std::max_element(logw.begin(), logw.end());
    }
    double total = 0.0;
    for (double& v : logw) {
      v = std::exp(v - mx);
      total += v;
    }
    for (std::size_t n = 0; n < corpus.size(); ++n) {
      const double w = logw[n] / total;
      if (skip < L) {
        out.rows(skip, corpus[n][skip]) += w;
      } else {
        for (std::size_t l = 0; l < L; ++l) out.rows(l, corpus[n][l]) += w;
      }
    }
  };
  if (mode == BayesConditioning::kAllPositions) {
    add_rows(L);
  } else {
    for (std::size_t l = 0; l < L; ++l) add_rows(l);
  }
  return out;
}

/// bayes_denoiser_eval over the distinct sequences of a corpus, weighted by multiplicity.
class BayesDenoiser : public Denoiser {
 public:
  BayesDenoiser(const std::vector<TokenSeq>& corpus, std::size_t K,
                BayesConditioning mode = BayesConditioning::kOtherPositions)
      : K_(K), mode_(mode) {
    detail::require(!corpus.empty(), ErrorKind::kParameter, "bayes denoiser needs a nonempty corpus");
    std::map<TokenSeq, double> tally;
    for (const auto& s : corpus) {
      check_tokens(s, K_);
      tally[s] += 1.0;
    }
    for (const auto& [s, c] : tally) {
      unique_.push_back(s);
      counts_.push_back(c);
    }
  }

  std::size_t vocab_size() const override { return K_; }
  DenoiserOutput eval_tokens(const TokenSeq& z, double, double alpha) const override {
    auto out = bayes_denoiser_eval(unique_, K_, z, alpha, &counts_, mode_);
    check_row_stochastic(out.rows);
    return std::move(out.rows);
  }

 private:
  std::size_t K_;
  BayesConditioning mode_;
  std::vector<TokenSeq> unique_;
  std::vector<double> counts_;
};

/// bayes_denoiser_eval for independent positions with the given laws. With
/// independent positions, p(x_l | z_{-l}) is the position law itself.
class FactorizedBayesDenoiser : public Denoiser {
 public:
  explicit FactorizedBayesDenoiser(std::vector<Categorical> marginals,
                                   BayesConditioning mode = BayesConditioning::kOtherPositions)
      : marg_(std::move(marginals)), mode_(mode) {
    detail::require(!marg_.empty(), ErrorKind::kParameter, "factorized denoiser needs >= 1 position");
    K_ = marg_.front().size();
    for (const auto& m : marg_) detail::require(m.size() == K_, ErrorKind::kShape, "marginal size mismatch");
  }

  std::size_t vocab_size() const override { return K_; }
  DenoiserOutput eval_tokens(const TokenSeq& z, double, double alpha) const override {
    detail::require(z.size() == marg_.size(), ErrorKind::kShape, "factorized denoiser length mismatch");
    // Own-token likelihood; constant when the own token is excluded.
    const bool own = mode_ == BayesConditioning::kAllPositions;
    const double base = own ? (1.0 - alpha) / static_cast<double>(K_) : 1.0;
    const double hit = own ? alpha : 0.0;
    Matrix out(z.size(), K_);
    for (std::size_t l = 0; l < z.size(); ++l) {
      double sum = 0.0;
      for (std::size_t k = 0; k < K_; ++k) {
        const double v = marg_[l][k] * (base + (k == z[l] ? hit : 0.0));
        out(l, k) = v;
        sum += v;
      }
      for (std::size_t k = 0; k < K_; ++k) out(l, k) /= sum;
    }
    return out;
  }

 private:
  std::vector<Categorical> marg_;
  BayesConditioning mode_;
  std::size_t K_ = 0;
};

/// Context-free table: row = softmax(logits[bin(t)][z]).
/// Parameter layout: index (bin * K + z) * K + k.
class TabularDenoiser : public TrainableDenoiser {
 public:
  TabularDenoiser(std::size_t bins, std::size_t K) : B_(bins), K_(K), logits_(bins * K * K, 0.0) {
    detail::require(B_ >= 1 && K_ >= 2, ErrorKind::kParameter, "tabular needs B >= 1 and K >= 2");
  }
  TabularDenoiser(std::size_t bins, std::size_t K, std::vector<double> logits) : TabularDenoiser(bins, K) {
    detail::require(logits.size() == logits_.size(), ErrorKind::kShape, "tabular parameter count mismatch");
    logits_ = std::move(logits);
  }

  std::size_t bins() const { return B_; }
  std::size_t vocab_size() const override { return K_; }
  ModelKind kind() const override { return ModelKind::kTabular; }
  std::vector<double>& params() override { return logits_; }
  const std::vector<double>& params() const override { return logits_; }
  std::unique_ptr<TrainableDenoiser> clone() const override { return std::make_unique<TabularDenoiser>(*this); }

  std::size_t bin(double t) const {
    detail::require(t >= 0.0 && t <= 1.0, ErrorKind::kDomain, "tabular time outside [0,1]");
    return std::min(static_cast<std::size_t>(std::floor(t * static_cast<double>(B_))), B_ - 1);
  }

  DenoiserOutput eval_tokens(const TokenSeq& z, double t, double) const override {
    const std::size_t b = bin(t);
    Matrix out(z.size(), K_);
    for (std::size_t l = 0; l < z.size(); ++l) {
      detail::require(z[l] < K_, ErrorKind::kIndex, "token out of range");
      const double* src = logits_.data() + (b * K_ + z[l]) * K_;
      std::copy(src, src + K_, out.row(l));
      softmax_inplace(out.row(l), K_);
    }
    check_row_stochastic(out);
    return out;
  }

  std::vector<double> vjp_tokens(const TokenSeq& z, double t, const Matrix& upstream) const override {
    detail::require(upstream.rows == z.size() && upstream.cols == K_, ErrorKind::kShape, "upstream shape mismatch");
    const Matrix p = eval_tokens(z, t, 0.0);
    const std::size_t b = bin(t);
    std::vector<double> grad(logits_.size(), 0.0);
    for (std::size_t l = 0; l < z.size(); ++l) {
      double dot = 0.0;
      for (std::size_t k = 0; k < K_; ++k) dot += upstream(l, k) * p(l, k);
      double* g = grad.data() + (b * K_ + z[l]) * K_;
      for (std::size_t k = 0; k < K_; ++k) g[k] += p(l, k) * (upstream(l, k) - dot);
    }
    return grad;
  }

 private:
  std::size_t B_;
  std::size_t K_;
  std::vector<double> logits_;
};

/// One hidden tanh layer per position: out = softmax(W2 tanh(W1 [row; t] + b1) + b2).
/// Parameter layout: W1 (H x (K+1), row-major), b1 (H), W2 (K x H, row-major), b2 (K).
class MlpDenoiser : public TrainableDenoiser {
 public:
  MlpDenoiser(std::size_t K, std::size_t hidden) : K_(K), H_(hidden), p_(count(K, hidden), 0.0) {
    detail::require(K_ >= 2 && H_ >= 1, ErrorKind::kParameter, "mlp needs K >= 2 and H >= 1");
  }
  MlpDenoiser(std::size_t K, std::size_t hidden, std::vector<double> params) : MlpDenoiser(K, hidden) {
    detail::require(params.size() == p_.size(), ErrorKind::kShape, "mlp parameter count mismatch");
    p_ = std::move(params);
  }

  /// Weights N(0, scale^2 / fan_in), biases zero.
  static MlpDenoiser random(std::size_t K, std::size_t hidden, double scale, CounterRng& rng) {
    MlpDenoiser m(K, hidden);
    const double s1 = scale / std::sqrt(static_cast<double>(K + 1));
    const double s2 = scale / std::sqrt(static_cast<double>(hidden));
    for (std::size_t i = 0; i < hidden * (K + 1); ++i) m.p_[i] = s1 * rng.normal();
    const std::size_t w2 = hidden * (K + 1) + hidden;
    for (std::size_t i = 0; i < K * hidden; ++i) m.p_[w2 + i] = s2 * rng.normal();
    return m;
  }

  static std::size_t count(std::size_t K, std::size_t H) { return H * (K + 1) + H + K * H + K; }

  std::size_t hidden() const { return H_; }
  std::size_t vocab_size() const override { return K_; }
  ModelKind kind() const override { return ModelKind::kMlp; }
  bool accepts_simplex() const override { return true; }
  std::vector<double>& params() override { return p_; }
  const std::vector<double>& params() const override { return p_; }
  std::unique_ptr<TrainableDenoiser> clone() const override { return std::make_unique<MlpDenoiser>(*this); }

  DenoiserOutput eval_tokens(const TokenSeq& z, double t, double) const override {
    return eval_simplex(one_hot_rows(z, K_), t);
  }

  DenoiserOutput eval_simplex(const Matrix& rows, double t) const override {
    check_params();
    detail::require(rows.cols == K_, ErrorKind::kShape, "mlp input width mismatch");
    Matrix out(rows.rows, K_);
    std::vector<double> h(H_);
    for (std::size_t l = 0; l < rows.rows; ++l) {
      hidden_layer(rows.row(l), t, h.data());
      output_layer(h.data(), out.row(l));
    }
    check_row_stochastic(out);
    return out;
  }

  std::vector<double> vjp_tokens(const TokenSeq& z, double t, const Matrix& upstream) const override {
    return vjp_simplex(one_hot_rows(z, K_), t, upstream);
  }

  std::vector<double> vjp_simplex(const Matrix& rows, double t, const Matrix& upstream) const override {
    check_params();
    detail::require(rows.cols == K_ && upstream.rows == rows.rows && upstream.cols == K_, ErrorKind::kShape,
                    "mlp vjp shape mismatch");
    std::vector<double> grad(p_.size(), 0.0);
    double* dW1 = grad.data();
    double* db1 = dW1 + H_ * (K_ + 1);
    double* dW2 = db1 + H_;
    double* db2 = dW2 + K_ * H_;
    const double* W2 = p_.data() + H_ * (K_ + 1) + H_;
    std::vector<double> h(H_), prob(K_), go(K_), ga(H_);
    for (std::size_t l = 0; l < rows.rows; ++l) {
      const double* x = rows.row(l);
      hidden_layer(x, t, h.data());
      output_layer(h.data(), prob.data());
      double dot = 0.0;
      for (std::size_t k = 0; k < K_; ++k) dot += upstream(l, k) * prob[k];
      for (std::size_t k = 0; k < K_; ++k) go[k] = prob[k] * (upstream(l, k) - dot);
      std::fill(ga.begin(), ga.end(), 0.0);
      for (std::size_t k = 0; k < K_; ++k) {
        db2[k] += go[k];
        for (std::size_t j = 0; j < H_; ++j) {
          dW2[k * H_ + j] += go[k] * h[j];
          ga[j] += W2[k * H_ + j] * go[k];
        }
      }
      for (std::size_t j = 0; j < H_; ++j) {
        const double g = ga[j] * (1.0 - h[j] * h[j]);
        db1[j] += g;
        double* w = dW1 + j * (K_ + 1);
        for (std::size_t k = 0; k < K_; ++k) w[k] += g * x[k];
        w[K_] += g * t;
      }
    }
    return grad;
  }

 private:
  void check_params() const {
    for (double v : p_) detail::require(std::isfinite(v), ErrorKind::kState, "mlp has non-finite parameters");
  }

  void hidden_layer(const double* x, double t, double* h) const {
    const double* W1 = p_.data();
    const double* b1 = W1 + H_ * (K_ + 1);
    for (std::size_t j = 0; j < H_; ++j) {
      const double* w = W1 + j * (K_ + 1);
      double a = b1[j] + w[K_] * t;
      for (std::size_t k = 0; k < K_; ++k) a += w[k] * x[k];
      h[j] = std::tanh(a);
    }
  }

  void output_layer(const double* h, double* out) const {
    const double* W2 = p_.data() + H_ * (K_ + 1) + H_;
    const double* b2 = W2 + K_ * H_;
    for (std::size_t k = 0; k < K_; ++k) {
      double o = b2[k];
      for (std::size_t j = 0; j < H_; ++j) o += W2[k * H_ + j] * h[j];
      out[k] = o;
    }
    softmax_inplace(out, K_);
  }

  std::size_t K_;
  std::size_t H_;
  std::vector<double> p_;
};

/// Gaussian-space predictor x_theta(w, t) for the continuous NELBO.
class GaussianDenoiser {
 public:
  virtual ~GaussianDenoiser() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual Matrix eval(const Matrix& w, double t) const = 0;
};

class PerfectGaussianDenoiser : public GaussianDenoiser {
 public:
  PerfectGaussianDenoiser(TokenSeq x, std::size_t K) : x_(std::move(x)), K_(K) { check_tokens(x_, K_); }
  std::size_t vocab_size() const override { return K_; }
  Matrix eval(const Matrix& w, double) const override {
    detail::require(w.rows == x_.size(), ErrorKind::kShape, "perfect denoiser length mismatch");
    return one_hot_rows(x_, K_);
  }

 private:
  TokenSeq x_;
  std::size_t K_;
};

class ConstantGaussianDenoiser : public GaussianDenoiser {
 public:
  explicit ConstantGaussianDenoiser(Categorical row) : row_(std::move(row)) {}
  std::size_t vocab_size() const override { return row_.size(); }
  Matrix eval(const Matrix& w, double) const override {
    Matrix out(w.rows, row_.size());
    for (std::size_t l = 0; l < w.rows; ++l) std::copy(row_.begin(), row_.end(), out.row(l));
    return out;
  }

 private:
  Categorical row_;
};

struct EmaState {
  double mu = 0.999;
  std::vector<double> shadow;
};

/// shadow <- mu shadow + (1 - mu) params.
inline EmaState ema_update(EmaState state, const std::vector<double>& params) {
  detail::require(state.shadow.size() == params.size(), ErrorKind::kShape, "ema shadow shape mismatch");
  detail::require(state.mu >= 0.0 && state.mu <= 1.0, ErrorKind::kParameter, "ema decay outside [0,1]");
  for (std::size_t i = 0; i < params.size(); ++i) state.shadow[i] = state.mu * state.shadow[i] + (1.0 - state.mu) * params[i];
  return state;
}

/// sum_i p_i log(p_i / q_i), 0 log 0 = 0, q floored at 1e-30.
template <class P, class Q>
double kl_categorical(const P& p, const Q& q) {
  double acc = 0.0;
  auto qi = std::begin(q);
  for (auto pi = std::begin(p); pi != std::end(p); ++pi, ++qi) {
    if (*pi > 0.0) acc += *pi * std::log(*pi / std::fmax(*qi, kProbFloor));
  }
  return std::fmax(acc, 0.0);
}

inline double kl_categorical(const Categorical& p, const Categorical& q) {
  detail::require(p.size() == q.size(), ErrorKind::kShape, "kl size mismatch");
  return kl_categorical(p.probs(), q.probs());
}

/// FNV-1a over parameter bit patterns.
inline std::uint64_t params_checksum(const std::vector<double>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : params) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFF;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

inline constexpr const char* kModelMagic = "DUOMDL1";

/// Checkpoint: magic, kind tag, two dimensions (tabular: B, K; mlp: K, H),
/// parameter count, then parameters in the documented layout.
inline void save_model(const TrainableDenoiser& model, const std::string& path) {
  auto os = io::open_out(path, true);
  io::write_magic(os, kModelMagic);
  io::write_u64(os, static_cast<std::uint64_t>(model.kind()));
  if (model.kind() == ModelKind::kTabular) {
    const auto& t = static_cast<const TabularDenoiser&>(model);
    io::write_u64(os, t.bins());
    io::write_u64(os, t.vocab_size());
  } else {
    const auto& m = static_cast<const MlpDenoiser&>(model);
    io::write_u64(os, m.vocab_size());
    io::write_u64(os, m.hidden());
  }
  io::write_u64(os, model.params().size());
  for (double v : model.params()) io::write_f64(os, v);
  if (!os) throw Error(ErrorKind::kIo, "failed writing model: " + path);
}

inline std::unique_ptr<TrainableDenoiser> load_model(const std::string& path) {
  auto is = io::open_in(path, true);
  io::expect_magic(is, kModelMagic);
  const std::uint64_t tag = io::read_u64(is);
  const std::uint64_t d1 = io::read_u64(is);
  const std::uint64_t d2 = io::read_u64(is);
  const std::uint64_t n = io::read_u64(is);
  detail::require(d1 <= (1u << 20) && d2 <= (1u << 20) && n <= (std::uint64_t{1} << 31), ErrorKind::kState,
                  "model dimensions out of range");
  std::vector<double> params(n);
  for (auto& v : params) v = io::read_f64(is);
  if (tag == static_cast<std::uint64_t>(ModelKind::kTabular)) {
    return std::make_unique<TabularDenoiser>(d1, d2, std::move(params));
  }
  if (tag == static_cast<std::uint64_t>(ModelKind::kMlp)) {
    return std::make_unique<MlpDenoiser>(d1, d2, std::move(params));
  }
  throw Error(ErrorKind::kState, "unknown model kind tag " + std::to_string(tag));
}

}  // namespace duo
