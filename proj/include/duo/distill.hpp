#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "duo/categorical.hpp"
#include "duo/error.hpp"
#include "duo/models.hpp"
#include "duo/rng.hpp"
#include "duo/sampling.hpp"
#include "duo/schedule.hpp"
#include "duo/seqdist.hpp"

namespace duo {

enum class TeacherMode { kStudentWeights, kEmaWeights };
enum class KlDirection { kStudentFirst, kTeacherFirst };

inline TeacherMode parse_teacher_mode(const std::string& s) {
  if (s == "student-weights") return TeacherMode::kStudentWeights;
  if (s == "ema-weights") return TeacherMode::kEmaWeights;
  throw Error(ErrorKind::kParameter, "unknown teacher mode: " + s);
}

inline KlDirection parse_kl_direction(const std::string& s) {
  if (s == "student-first") return KlDirection::kStudentFirst;
  if (s == "teacher-first") return KlDirection::kTeacherFirst;
  throw Error(ErrorKind::kParameter, "unknown kl direction: " + s);
}

inline const char* to_string(TeacherMode m) {
  return m == TeacherMode::kStudentWeights ? "student-weights" : "ema-weights";
}
inline const char* to_string(KlDirection d) {
  return d == KlDirection::kStudentFirst ? "student-first" : "teacher-first";
}

struct DcdConfig {
  std::size_t rounds = 5;
  std::size_t steps_per_round = 10000;
  double delta0 = 1.0 / 512.0;
  double lr = 0.1;
  double ema_decay = 0.999;
  TeacherMode teacher_mode = TeacherMode::kStudentWeights;
  KlDirection kl_direction = KlDirection::kStudentFirst;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(rounds >= 1 && steps_per_round >= 1 && batch_size >= 1, ErrorKind::kParameter,
                    "dcd counts must be >= 1");
    detail::require(delta0 >= 0.0 && delta0 * std::ldexp(1.0, static_cast<int>(rounds) - 1) <= 1.0,
                    ErrorKind::kParameter, "dcd needs 0 <= delta0 * 2^(N-1) <= 1");
    detail::require(lr > 0.0, ErrorKind::kParameter, "dcd learning rate must be positive");
    detail::require(ema_decay >= 0.0 && ema_decay <= 1.0, ErrorKind::kParameter, "ema decay outside [0,1]");
  }
};

/// Few-step evaluation attached to a run. data_dist is the exact law over K^L sequences.
struct DcdEval {
  std::vector<std::size_t> T_list;
  std::size_t n_samples = 1000;
  std::vector<double> data_dist;
  Schedule schedule = Schedule::linear_discrete();
};

struct DcdStepRecord {
  std::size_t round = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double delta = 0.0;
};

struct DistillMetrics {
  std::vector<double> round_loss;             // mean KL per round
  std::vector<std::vector<double>> round_tv;  // per round, one TV per eval T
  std::vector<double> round_seconds;
  std::vector<DcdStepRecord> steps;
  std::vector<std::string> warnings;
  std::vector<std::size_t> eval_T;
};

struct DcdResult {
  std::vector<double> ema_params;
  DistillMetrics metrics;
};

/// Sequence-level loss sum_l KL between student and teacher rows, and its
/// gradient with respect to the student probabilities.
inline double dcd_kl(const Matrix& student, const Matrix& teacher, KlDirection dir, Matrix* grad) {
  double loss = 0.0;
  for (std::size_t l = 0; l < student.rows; ++l) {
    const double* p = student.row(l);
    const double* q = teacher.row(l);
    const std::span<const double> ps(p, student.cols), qs(q, student.cols);
    loss += dir == KlDirection::kStudentFirst ? kl_categorical(ps, qs) : kl_categorical(qs, ps);
    if (!grad) continue;
    for (std::size_t k = 0; k < student.cols; ++k) {
      const double pk = std::fmax(p[k], kProbFloor);
      const double qk = std::fmax(q[k], kProbFloor);
      (*grad)(l, k) = dir == KlDirection::kStudentFirst ? std::log(pk / qk) + 1.0 : -q[k] / pk;
    }
  }
  return loss;
}

/// Exact TV between the empirical sampler law at each T and data_dist.
inline std::vector<double> dcd_eval_fewstep(const Denoiser& model, std::size_t K, std::size_t L,
                                            const std::vector<std::size_t>& T_list, std::size_t n_samples,
                                            const std::vector<double>& data_dist, const CounterRng& rng,
                                            const Schedule& schedule = Schedule::linear_discrete(),
                                            bool greedy_tail = false) {
  const std::size_t space = sequence_space_size(K, L);
  detail::require(data_dist.size() == space, ErrorKind::kShape, "data distribution size must be K^L");
  detail::require(n_samples >= 1, ErrorKind::kParameter, "n_samples must be >= 1");
  std::vector<double> tv;
  for (std::size_t i = 0; i < T_list.size(); ++i) {
    const auto samples = ancestral_generate_batch(model, K, L, T_list[i], greedy_tail, n_samples,
                                                  rng.substream(i), schedule);
    tv.push_back(tv_distance(empirical_distribution(samples, K, L), data_dist));
  }
  return tv;
}

/// Discrete Consistency Distillation.
///
/// Per round the teacher is a frozen copy of the student (or of the EMA
/// shadow in ema-weights mode). Each step draws a minibatch with
/// replacement, t ~ U[0,1] and eps per batch entry, builds the DDT pair at
/// s = max(t - delta, 0), and descends the batch-mean of
/// sum_l KL(student(z_t, t), teacher(z_s, s)). The EMA shadow starts at the
/// student weights and is returned. delta doubles after every round.
inline DcdResult dcd_train(const DcdConfig& config, const std::vector<TokenSeq>& corpus, TrainableDenoiser& student,
                           const DcdEval* eval = nullptr) {
  config.validate();
  detail::require(!corpus.empty(), ErrorKind::kParameter, "empty distillation corpus");
  const std::size_t K = student.vocab_size();
  for (const auto& s : corpus) check_tokens(s, K);
  CounterRng rng(config.seed);
  const CounterRng eval_rng = rng.substream(0xE7A1);
  EmaState ema{config.ema_decay, student.params()};
  DistillMetrics metrics;
  if (eval) metrics.eval_T = eval->T_list;
  double delta = config.delta0;
  const double B = static_cast<double>(config.batch_size);
  for (std::size_t round = 0; round < config.rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    std::unique_ptr<TrainableDenoiser> teacher = student.clone();
    if (config.teacher_mode == TeacherMode::kEmaWeights) teacher->params() = ema.shadow;
    const std::uint64_t teacher_sum = params_checksum(teacher->params());
    double round_loss = 0.0;
    for (std::size_t step = 0; step < config.steps_per_round; ++step) {
      double loss = 0.0;
      std::vector<double> grad(student.params().size(), 0.0);
      for (std::size_t b = 0; b < config.batch_size; ++b) {
        const TokenSeq& x = corpus[rng.below(corpus.size())];
        const double t = rng.uniform();
        Matrix eps(x.size(), K);
        for (double& e : eps.data) e = rng.normal();
        const DdtPair pair = ddt_pair(x, eps, t, delta);
        const Matrix p = student.eval_tokens(pair.z_t, pair.t, 0.0);
        const Matrix q = teacher->eval_tokens(pair.z_s, pair.s, 0.0);
        Matrix g(x.size(), K);
        loss += dcd_kl(p, q, config.kl_direction, &g) / B;
        for (double& v : g.data) v /= B;
        const auto pg = student.vjp_tokens(pair.z_t, pair.t, g);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += pg[i];
      }
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::kNumeric, "non-finite distillation loss at round " + std::to_string(round) +
                                             " step " + std::to_string(step));
      }
      auto& params = student.params();
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= config.lr * grad[i];
      ema = ema_update(std::move(ema), params);
      metrics.steps.push_back({round, step, loss, delta});
      round_loss += loss;
    }
    detail::require(params_checksum(teacher->params()) == teacher_sum, ErrorKind::kState,
                    "teacher parameters changed within a round");
    metrics.round_loss.push_back(round_loss / static_cast<double>(config.steps_per_round));
    if (eval) {
      std::unique_ptr<TrainableDenoiser> snapshot = student.clone();
      snapshot->params() = ema.shadow;
      metrics.round_tv.push_back(dcd_eval_fewstep(*snapshot, K, corpus.front().size(), eval->T_list,
                                                  eval->n_samples, eval->data_dist, eval_rng.substream(round),
                                                  eval->schedule));
    }
    metrics.round_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    delta *= 2.0;
    if (delta > 1.0) {
      if (round + 1 < config.rounds) {
        metrics.warnings.push_back("delta exceeded 1 after round " + std::to_string(round) + "; clamped");
      }
      delta = 1.0;
    }
  }
  return {std::move(ema.shadow), std::move(metrics)};
}

/// CSV with one row per step; TV columns are filled on the last step of each round.
inline void write_metrics_csv(std::ostream& os, const DistillMetrics& m) {
  os << "round,step,loss,delta";
  for (std::size_t T : m.eval_T) os << ",tv_T" << T;
  os << "\n";
  for (const auto& r : m.steps) {
    os << r.round << "," << r.step << "," << r.loss << "," << r.delta;
    const bool last = r.round < m.round_tv.size() && (&r == &m.steps.back() || (&r + 1)->round != r.round);
    for (std::size_t i = 0; i < m.eval_T.size(); ++i) {
      os << ",";
      if (last) os << m.round_tv[r.round][i];
    }
    os << "\n";
  }
}

}  // namespace duo
