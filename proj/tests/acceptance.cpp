// Acceptance run: one line per criterion, exit status = number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "duo/corpus.hpp"
#include "duo/distill.hpp"
#include "duo/objectives.hpp"
#include "duo/sampling.hpp"
#include "duo/verify.hpp"

namespace {

using namespace duo;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  const char* id;
  const char* title;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome duality() {
  double worst = 0.0;
  bool pass = true;
  std::uint64_t seed = 100;
  for (std::size_t K : {2u, 5u, 27u}) {
    for (double a : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const auto r = duality_test(K, a, 200000, seed++);
      pass = pass && r.pass;
      worst = std::fmax(worst, r.statistic / r.threshold);
    }
  }
  return {pass, fmt("15 cells, worst TV/bound = %.3f", worst)};
}

Outcome transform_k2() {
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double a = i / 100.0;
    const double exact = std::erf(a / (sigma_tilde(a) * 2.0));
    worst = std::fmax(worst, std::fabs(transform(a, 2) - exact));
  }
  worst = std::fmax(worst, std::fabs(transform(1.0, 2) - 1.0));
  bool monotone = true;
  double prev = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double v = transform(i / 1000.0, 2);
    monotone = monotone && v >= prev;
    prev = v;
  }
  const bool ends = transform(0.0, 2) == 0.0 && transform(1.0, 2) == 1.0;
  return {worst <= 1e-6 && monotone && ends,
          fmt("max |T - closed form| = %.2e, endpoints exact %g, monotone %g", worst, ends, monotone)};
}

Outcome curriculum_window_large_vocab() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto table = build_table(30522, 100000);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double lo = table.invert(0.05);
  const double hi = table.invert(0.95);
  const bool pass = std::fabs(lo - 0.85) <= 0.02 && std::fabs(hi - 0.97) <= 0.02 && secs <= 300.0;
  return {pass, fmt("invert(0.05) = %.4f (want 0.85), invert(0.95) = %.4f (want 0.97), build %.0f s", lo, hi, secs)};
}

Outcome reverse_posterior_brute_force() {
  const double pairs[5][2] = {{0.9, 0.5}, {0.7, 0.3}, {0.5, 0.1}, {0.99, 0.98}, {0.3, 0.01}};
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t K = 2; K <= 6; ++K) {
    for (const auto& pr : pairs) {
      const double as = pr[0], at = pr[1];
      for (std::size_t x = 0; x < K; ++x) {
        for (std::size_t z = 0; z < K; ++z) {
          const auto post = reverse_posterior(z, Categorical::one_hot(x, K), as, at);
          std::vector<double> joint(K);
          double norm = 0.0;
          for (std::size_t zs = 0; zs < K; ++zs) {
            joint[zs] = discrete_marginal(x, as, K)[zs] * transition_kernel(zs, at / as, K)[z];
            norm += joint[zs];
          }
          for (std::size_t zs = 0; zs < K; ++zs) worst = std::fmax(worst, std::fabs(post[zs] - joint[zs] / norm));
          ++cases;
        }
      }
    }
  }
  return {worst <= 1e-10, fmt("%.0f cases, max abs diff = %.2e", static_cast<double>(cases), worst)};
}

Outcome rao_blackwell() {
  const auto r = f_equality_test(10000, 500);
  return {r.pass, fmt("max relative gap = %.2e over 1e4 configs (perfect inputs exact zero: %g)", r.statistic,
                      r.bound.find("not exactly zero") == std::string::npos)};
}

Outcome elbo_equivalence() {
  auto table = std::make_shared<const TransformTable>(build_table(4, 10001));
  const auto corpus = generate_markov(4, 8, 64, 0.5, 600);
  const BayesDenoiser bayes(corpus.seqs, 4);
  const auto r = elbo_equivalence_test(corpus.seqs, bayes, table, 10000, 601);
  return {r.pass, fmt("|diff| = %.4f, 3 SE = %.4f", r.statistic, r.threshold)};
}

Outcome marginal_ode() {
  double worst = 0.0;
  bool pass = true;
  // T evaluated directly; quadrature noise over h stays far below the bound.
  const double tol = 1e-11;
  for (std::size_t K : {2u, 100u}) {
    auto alpha_of = [&](double u) { return duo::transform(1.0 - u, K, tol); };
    for (double t : {0.1, 0.5, 0.9}) {
      const AlphaEval ev{alpha_of(t), -duo::transform_derivative(1.0 - t, K, tol)};
      const auto r = ode_residual(t, 0, K, alpha_of, ev, 1e-5);
      pass = pass && r.pass;
      worst = std::fmax(worst, r.statistic);
    }
  }
  return {pass, fmt("max residual = %.2e (bound 1e-4)", worst)};
}

Outcome ddt_single_flip() {
  double violations = 0.0;
  for (std::size_t K : {2u, 5u, 27u}) violations += ddt_flip_test(K, 10000, 256, 700 + K).statistic;
  return {violations == 0.0, fmt("%.0f violations over 3 x 1e4 trajectories", violations)};
}

Outcome composition() {
  const auto table = build_table(3, 1001);
  const auto r = thm31_test(table, 0.6, 0.3, 500000, 800);
  return {r.pass, fmt("max cell deviation = %.2f sigma (bound 3)", r.statistic)};
}

Outcome nonmarkov() {
  const auto w = nonmarkov_demo({1.0, 0.5, -0.5}, 0.5);
  const bool equal = w.discrete_kernel[w.i] == w.discrete_kernel[w.j];
  return {w.report.pass && equal,
          fmt("w_s = (1, 0.5, -0.5): Gaussian gap = %.4f, discrete kernel equal %g", w.report.statistic, equal)};
}

Outcome dpi() {
  CounterRng rng(900);
  bool pass = true;
  std::string detail;
  for (int n = 0; n < 5; ++n) {
    auto mixture = [&] {
      VertexMixture m{std::vector<double>(3), std::vector<double>(3)};
      double s = 0.0;
      for (double& w : m.weights) s += (w = sample_gamma(1.0, rng));
      for (double& w : m.weights) w /= s;
      for (double& l : m.levels) l = rng.uniform(0.2, 0.8);
      return m;
    };
    const auto q = mixture();
    const auto p = mixture();
    const auto r = dpi_test(q, p, 20000, 901 + n);
    pass = pass && r.kl_pushforward <= r.kl_continuous + 3.0 * r.kl_continuous_se;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s%.4f<=%.4f", n ? ", " : "", r.kl_pushforward, r.kl_continuous);
    detail += buf;
  }
  return {pass, "KL_push vs KL_cont: " + detail};
}

Outcome gradient_contract() {
  CounterRng rng(1000);
  auto upstream = [&](std::size_t L, std::size_t K) {
    Matrix m(L, K);
    for (double& v : m.data) v = rng.normal();
    return m;
  };
  TabularDenoiser tab(8, 5);
  for (double& v : tab.params()) v = rng.normal();
  const auto a = gradient_check(tab, token_probe_loss({0, 4, 2, 2}, 0.37, upstream(4, 5)));
  auto mlp = MlpDenoiser::random(5, 12, 1.0, rng);
  for (double& v : mlp.params()) v += 0.1 * rng.normal();
  const auto b = gradient_check(mlp, token_probe_loss({1, 3, 0}, 0.61, upstream(3, 5)));
  Matrix rows(2, 5);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t k = 0; k < 5; ++k) rows(l, k) = rng.normal();
    softmax_inplace(rows.row(l), 5);
  }
  const auto c = gradient_check(mlp, simplex_probe_loss(rows, 0.2, upstream(2, 5)));
  return {a.pass && b.pass && c.pass,
          fmt("tabular %.1e, mlp tokens %.1e, mlp simplex %.1e (bound 1e-5)", a.statistic, b.statistic, c.statistic)};
}

Outcome variance_direction() {
  const std::size_t K = 4;
  auto table = std::make_shared<const TransformTable>(build_table(K, 10001));
  const auto corpus = generate_markov(K, 8, 256, 0.5, 3);
  CounterRng mr(5);
  const auto mlp = MlpDenoiser::random(K, 16, 1.0, mr);
  const auto [beta, gamma] = curriculum_window(*table);
  auto probe = [&](const CurriculumConfig& cfg, std::uint64_t seed) {
    CounterRng r(seed);
    return variance_probe(
        [&] {
          std::vector<TokenSeq> batch(16);
          for (auto& s : batch) s = corpus.seqs[r.below(corpus.size())];
          return curriculum_loss(batch, cfg, mlp, r).loss;
        },
        2000);
  };
  CurriculumConfig full;
  full.table = table;
  full.time_mode = TimeMode::kIid;
  CurriculumConfig soft = full;
  soft.tau = 0.001;
  soft.beta = beta;
  soft.gamma = gamma;
  const auto v_full = probe(full, 1);
  const auto v_soft = probe(soft, 1);
  CurriculumConfig ld = full;
  ld.time_mode = TimeMode::kLowDiscrepancy;
  const auto v_ld = probe(ld, 2);
  const auto v_iid = probe(full, 2);
  const bool pass = v_soft.variance < v_full.variance && v_ld.variance < v_iid.variance;
  std::ostringstream os;
  os << "window [" << beta << ", " << gamma << "]: var " << v_soft.variance << " < " << v_full.variance
     << "; low-discrepancy " << v_ld.variance << " < iid " << v_iid.variance;
  return {pass, os.str()};
}

struct FewStepSetup {
  static constexpr std::size_t K = 4, L = 2, B = 16;
  std::shared_ptr<const TransformTable> table = std::make_shared<const TransformTable>(build_table(K, 10001));
  std::vector<TokenSeq> corpus{{0, 1}, {0, 2}};
  std::vector<double> data = [] {
    std::vector<double> d(16, 0.0);
    d[sequence_index({0, 1}, K)] = 0.5;
    d[sequence_index({0, 2}, K)] = 0.5;
    return d;
  }();

  TabularDenoiser pretrain(std::uint64_t seed) const {
    TabularDenoiser base(B, K);
    TrainConfig tc;
    tc.steps = 8000;
    tc.batch_size = 16;
    tc.lr = 0.5;
    tc.curriculum.table = table;
    CounterRng rng(seed);
    train_curriculum(corpus, base, tc, rng);
    return base;
  }

  double tv_at(const Denoiser& model, std::size_t T) const {
    return tv_distance(ancestral_law(model, K, L, T, false, Schedule::via_transform(table)), data);
  }
};

Outcome distillation_direction() {
  const FewStepSetup setup;
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TabularDenoiser base = setup.pretrain(seed);
    DcdConfig dc;
    dc.rounds = 3;
    dc.steps_per_round = 2000;
    dc.lr = 0.2;
    dc.ema_decay = 0.999;
    dc.batch_size = 16;
    dc.seed = seed + 100;
    TabularDenoiser student = base;
    const auto res = dcd_train(dc, setup.corpus, student);
    const TabularDenoiser distilled(FewStepSetup::B, FewStepSetup::K, res.ema_params);
    const double before = setup.tv_at(base, 4);
    const double after = setup.tv_at(distilled, 4);
    wins += after < before;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%.3f->%.3f", seed ? ", " : "", before, after);
    detail += buf;
  }
  return {wins >= 4, fmt("%.0f/5 seeds improve; TV@T=4 ", wins) + detail};
}

Outcome greedy_tail_direction() {
  const FewStepSetup setup;
  const TabularDenoiser base = setup.pretrain(0);
  const auto sched = Schedule::via_transform(setup.table);
  const CounterRng rng(1100);
  const auto plain = ancestral_generate_batch(base, FewStepSetup::K, FewStepSetup::L, 4, false, 10000, rng, sched);
  const auto greedy = ancestral_generate_batch(base, FewStepSetup::K, FewStepSetup::L, 4, true, 10000, rng, sched);
  const double hp = mean_unigram_entropy(plain, FewStepSetup::K);
  const double hg = mean_unigram_entropy(greedy, FewStepSetup::K);
  return {hg <= hp, fmt("entropy greedy %.4f <= ancestral %.4f nats", hg, hp)};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"AC-1", "duality", 60, duality},
      {"AC-2", "transform closed form", 5, transform_k2},
      {"AC-3", "curriculum window at K=30522", 300, curriculum_window_large_vocab},
      {"AC-4", "reverse posterior", 5, reverse_posterior_brute_force},
      {"AC-5", "Rao-Blackwellized integrand", 5, rao_blackwell},
      {"AC-6", "ELBO equivalence", 60, elbo_equivalence},
      {"AC-7", "marginal ODE", 10, marginal_ode},
      {"AC-8", "DDT single flip", 30, ddt_single_flip},
      {"AC-9", "marginal-preserving composition", 120, composition},
      {"AC-10", "non-Markov witness", 5, nonmarkov},
      {"AC-11", "data processing inequality", 60, dpi},
      {"AC-12", "gradient contract", 10, gradient_contract},
      {"AC-13", "variance direction", 60, variance_direction},
      {"AC-14", "distillation direction", 300, distillation_direction},
      {"AC-15", "greedy tail entropy", 60, greedy_tail_direction},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_seconds;
    const bool pass = o.pass && in_budget;
    failures += !pass;
    std::printf("%-5s %s  %s: %s [%.1f s of %.0f s%s]\n", c.id, pass ? "PASS" : "FAIL", c.title, o.detail.c_str(),
                secs, c.budget_seconds, in_budget ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures;
}
