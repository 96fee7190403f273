// duo: command-line driver for tables, verification suites, NELBO evaluation,
// curriculum training, distillation, sampling, reports and corpora.
//
// Exit codes: 0 success, 1 a verification suite failed, 2 usage or config error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "duo/corpus.hpp"
#include "duo/distill.hpp"
#include "duo/models.hpp"
#include "duo/objectives.hpp"
#include "duo/sampling.hpp"
#include "duo/schedule.hpp"
#include "duo/seqdist.hpp"
#include "duo/verify.hpp"

namespace {

using json = nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitSuiteFailed = 1;
constexpr int kExitUsage = 2;

// Flat JSON config: {"seed": 3, "train.steps": 500, "verify.suite": ["ode"]}.
// A dotted key routes to the subcommand named by its prefix.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& is) const override {
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      std::stringstream ks(key);
      std::string part;
      std::vector<std::string> parts;
      while (std::getline(ks, part, '.')) parts.push_back(part);
      if (parts.empty()) continue;
      item.name = parts.back();
      parts.pop_back();
      item.parents = parts;
      auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }
};

// Resolved option values of one app, defaults included.
json resolved(const CLI::App* app) {
  json out = json::object();
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      out[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      out[name] = opt->get_default_str();
    }
  }
  return out;
}

void print_config(const CLI::App& app, const CLI::App* sub) {
  json cfg{{"command", sub->get_name()}, {"global", resolved(&app)}, {"options", resolved(sub)}};
  std::cerr << "# config " << cfg.dump() << "\n";
}

struct Common {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

std::shared_ptr<const duo::TransformTable> table_for(std::size_t K, const std::string& path, std::size_t N,
                                                     std::size_t jobs) {
  if (!path.empty()) {
    auto t = std::make_shared<const duo::TransformTable>(duo::TransformTable::load(path));
    duo::detail::require(t->vocab_size() == K, duo::ErrorKind::kParameter,
                         "table K=" + std::to_string(t->vocab_size()) + " does not match K=" + std::to_string(K));
    return t;
  }
  return std::make_shared<const duo::TransformTable>(duo::build_table(K, N, duo::kDefaultTransformTol, jobs));
}

// ---------------------------------------------------------------- table

struct TableOpts {
  std::size_t K = 0;
  std::size_t N = duo::kDefaultTableSize;
  double tol = duo::kDefaultTransformTol;
  std::string out;
  std::string check;
};

int run_table(const TableOpts& o, const Common& c) {
  if (!o.check.empty()) {
    const auto t = duo::TransformTable::load(o.check);
    json j{{"path", o.check},
           {"K", t.vocab_size()},
           {"N", t.size()},
           {"rel_tol", t.rel_tol()},
           {"invert_0.05", t.invert(0.05)},
           {"invert_0.95", t.invert(0.95)}};
    std::cout << j.dump() << "\n";
    return kExitOk;
  }
  if (o.K < 2 || o.out.empty()) throw duo::Error(duo::ErrorKind::kParameter, "table needs --K >= 2 and --out");
  const auto t = duo::build_table(o.K, o.N, o.tol, c.jobs);
  t.save(o.out);
  std::cout << json{{"path", o.out}, {"K", o.K}, {"N", t.size()}}.dump() << "\n";
  return kExitOk;
}

// --------------------------------------------------------------- verify

struct VerifyOpts {
  std::vector<std::string> suites{"all"};
  std::size_t K = 0;  // 0 = suite default
  std::size_t n = 0;  // 0 = suite default
  std::size_t N = duo::kDefaultTableSize + 1;
  std::string out;
};

const std::vector<std::string> kSuites{"duality", "ode", "elbo-equivalence", "f-equality", "nonmarkov",
                                       "dpi",     "gradcheck", "ddt", "thm31"};

std::vector<duo::TestReport> run_suite(const std::string& suite, const VerifyOpts& o, const Common& c) {
  using namespace duo;
  auto pick = [](std::size_t v, std::size_t dflt) { return v ? v : dflt; };
  std::vector<TestReport> out;
  CounterRng root(c.seed);
  if (suite == "duality") {
    const std::size_t K = pick(o.K, 27);
    for (double a : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      out.push_back(duality_test(K, a, pick(o.n, 200000), root.substream(static_cast<std::uint64_t>(a * 10)).next_u64()));
    }
  } else if (suite == "ode") {
    const std::size_t K = pick(o.K, 100);
    const auto table = table_for(K, "", o.N, c.jobs);
    for (double t : {0.1, 0.5, 0.9}) out.push_back(ode_residual(t, 0, K, table));
  } else if (suite == "elbo-equivalence") {
    const std::size_t K = pick(o.K, 4);
    const Corpus corpus = generate_markov(K, 8, 64, 0.5, c.seed);
    const BayesDenoiser bayes(corpus.seqs, K);
    const auto table = table_for(K, "", 10001, c.jobs);
    out.push_back(elbo_equivalence_test(corpus.seqs, bayes, table, pick(o.n, 10000), c.seed));
  } else if (suite == "f-equality") {
    out.push_back(f_equality_test(pick(o.n, 10000), c.seed));
  } else if (suite == "nonmarkov") {
    out.push_back(nonmarkov_demo({2.0, 0.5, -0.5}, 0.8).report);
  } else if (suite == "dpi") {
    const std::size_t K = pick(o.K, 3);
    CounterRng r = root.substream(7);
    for (int pair = 0; pair < 5; ++pair) {
      auto random_mixture = [&] {
        VertexMixture m{std::vector<double>(K), std::vector<double>(K)};
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          s += (m.weights[k] = 0.2 + r.uniform());
          m.levels[k] = 0.2 + 0.6 * r.uniform();
        }
        for (double& w : m.weights) w /= s;
        return m;
      };
      const VertexMixture q = random_mixture();
      const VertexMixture p = random_mixture();
      out.push_back(dpi_test(q, p, pick(o.n, 20000), r.next_u64()).report);
    }
  } else if (suite == "gradcheck") {
    const std::size_t K = pick(o.K, 5);
    CounterRng r = root.substream(11);
    TabularDenoiser tab(4, K);
    for (double& v : tab.params()) v = r.normal();
    TokenSeq z(6);
    for (auto& v : z) v = static_cast<Token>(r.below(K));
    Matrix up(z.size(), K);
    for (double& v : up.data) v = r.normal();
    auto rep = gradient_check(tab, token_probe_loss(z, 0.3, up));
    rep.name = "gradcheck tabular";
    out.push_back(rep);
    MlpDenoiser mlp = MlpDenoiser::random(K, 8, 1.0, r);
    Matrix rows(z.size(), K);
    for (std::size_t l = 0; l < rows.rows; ++l) {
      std::vector<double> w(K);
      for (double& v : w) v = r.normal();
      const auto s = tempered_softmax(w, 0.7);
      std::copy(s.begin(), s.end(), rows.row(l));
    }
    rep = gradient_check(mlp, simplex_probe_loss(rows, 0.6, up));
    rep.name = "gradcheck mlp";
    out.push_back(rep);
  } else if (suite == "ddt") {
    out.push_back(ddt_flip_test(pick(o.K, 5), pick(o.n, 10000), 256, c.seed));
  } else if (suite == "thm31") {
    const std::size_t K = pick(o.K, 3);
    const TransformTable table = build_table(K, 1001, kDefaultTransformTol, c.jobs);
    out.push_back(thm31_test(table, 0.6, 0.3, pick(o.n, 500000), c.seed));
  } else {
    throw Error(ErrorKind::kParameter, "unknown suite: " + suite);
  }
  return out;
}

int run_verify(const VerifyOpts& o, const Common& c) {
  std::vector<std::string> suites;
  for (const auto& s : o.suites) {
    if (s == "all") {
      suites.insert(suites.end(), kSuites.begin(), kSuites.end());
    } else if (std::find(kSuites.begin(), kSuites.end(), s) == kSuites.end()) {
      throw duo::Error(duo::ErrorKind::kParameter, "unknown suite: " + s);
    } else {
      suites.push_back(s);
    }
  }
  std::ofstream file;
  if (!o.out.empty()) file = duo::io::open_out(o.out, false);
  std::ostream& os = o.out.empty() ? std::cout : file;
  bool failed = false;
  for (const auto& s : suites) {
    for (const auto& r : run_suite(s, o, c)) {
      os << r.json_line() << "\n";
      failed = failed || r.status == duo::ReportStatus::kFail;
    }
  }
  return failed ? kExitSuiteFailed : kExitOk;
}

// ---------------------------------------------------------------- nelbo

struct NelboOpts {
  std::string corpus;
  std::string model;
  std::string denoiser = "bayes";
  std::string latents = "discrete";
  std::string schedule = "via-transform";
  std::string table;
  std::size_t N = 10001;
  std::size_t n_mc = 10000;
  std::string time_mode = "low-discrepancy";
};

int run_nelbo(const NelboOpts& o, const Common& c) {
  using namespace duo;
  if (o.corpus.empty()) throw Error(ErrorKind::kParameter, "nelbo needs --corpus");
  const Corpus corpus = load_corpus(o.corpus);
  std::unique_ptr<TrainableDenoiser> trained;
  std::unique_ptr<Denoiser> fixed;
  const Denoiser* d = nullptr;
  if (!o.model.empty()) {
    trained = load_model(o.model);
    d = trained.get();
  } else if (o.denoiser == "bayes") {
    fixed = std::make_unique<BayesDenoiser>(corpus.seqs, corpus.K);
    d = fixed.get();
  } else if (o.denoiser == "uniform") {
    fixed = std::make_unique<UniformDenoiser>(corpus.K);
    d = fixed.get();
  } else {
    throw Error(ErrorKind::kParameter, "unknown denoiser: " + o.denoiser);
  }
  const TimeMode mode = parse_time_mode(o.time_mode);
  CounterRng rng(c.seed);
  NelboEstimate e;
  if (o.latents == "gaussian") {
    e = nelbo_gaussian_latents(corpus.seqs, *d, table_for(corpus.K, o.table, o.N, c.jobs), mode, o.n_mc, rng);
  } else if (o.latents == "discrete") {
    Schedule s = Schedule::linear_discrete();
    if (o.schedule == "via-transform") {
      s = Schedule::via_transform(table_for(corpus.K, o.table, o.N, c.jobs));
    } else if (o.schedule != "linear") {
      throw Error(ErrorKind::kParameter, "unknown schedule: " + o.schedule);
    }
    e = sequence_nelbo(corpus.seqs, *d, s, mode, o.n_mc, rng);
  } else {
    throw Error(ErrorKind::kParameter, "unknown latents: " + o.latents);
  }
  std::cout << json{{"mean", e.mean}, {"std_error", e.std_error}, {"n_samples", e.n_samples}}.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainOpts {
  std::string corpus;
  std::string out;
  std::string model = "tabular";
  std::size_t bins = 16;
  std::size_t hidden = 16;
  double init_scale = 1.0;
  std::size_t steps = 1000;
  std::size_t batch = 16;
  double lr = 0.5;
  double tau = 0.0;
  std::optional<double> beta;
  std::optional<double> gamma;
  bool derived_window = false;
  std::string table;
  std::size_t N = 10001;
  std::string time_mode = "low-discrepancy";
  std::string log;
};

int run_train(const TrainOpts& o, const Common& c) {
  using namespace duo;
  if (o.corpus.empty() || o.out.empty()) throw Error(ErrorKind::kParameter, "train needs --corpus and --out");
  const Corpus corpus = load_corpus(o.corpus);
  CounterRng rng(c.seed);
  std::unique_ptr<TrainableDenoiser> model;
  if (o.model == "tabular") {
    model = std::make_unique<TabularDenoiser>(o.bins, corpus.K);
  } else if (o.model == "mlp") {
    CounterRng init = rng.substream(1);
    model = std::make_unique<MlpDenoiser>(MlpDenoiser::random(corpus.K, o.hidden, o.init_scale, init));
  } else {
    throw Error(ErrorKind::kParameter, "unknown model: " + o.model);
  }
  TrainConfig tc;
  tc.steps = o.steps;
  tc.batch_size = o.batch;
  tc.lr = o.lr;
  tc.curriculum.tau = o.tau;
  tc.curriculum.table = table_for(corpus.K, o.table, o.N, c.jobs);
  tc.curriculum.time_mode = parse_time_mode(o.time_mode);
  if (o.derived_window) std::tie(tc.curriculum.beta, tc.curriculum.gamma) = curriculum_window(*tc.curriculum.table);
  if (o.beta) tc.curriculum.beta = *o.beta;
  if (o.gamma) tc.curriculum.gamma = *o.gamma;
  tc.curriculum.validate();
  CounterRng train_rng = rng.substream(2);
  const auto losses = train_curriculum(corpus.seqs, *model, tc, train_rng);
  save_model(*model, o.out);
  if (!o.log.empty()) {
    auto os = io::open_out(o.log, false);
    os << "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) os << i << "," << losses[i] << "\n";
  }
  double tail = 0.0;
  const std::size_t n_tail = std::max<std::size_t>(1, losses.size() / 10);
  for (std::size_t i = losses.size() - n_tail; i < losses.size(); ++i) tail += losses[i] / static_cast<double>(n_tail);
  std::cout << json{{"model", o.out}, {"steps", losses.size()}, {"final_loss_mean", tail}}.dump() << "\n";
  return kExitOk;
}

// -------------------------------------------------------------- distill

struct DistillOpts {
  std::string corpus;
  std::string model;
  std::string out;
  duo::DcdConfig dcd;
  std::string teacher = "student-weights";
  std::string kl = "student-first";
  std::string metrics;
  std::vector<std::size_t> eval_T;
  std::size_t eval_n = 1000;
  std::string eval_schedule = "via-transform";
  std::string table;
  std::size_t N = 10001;
};

int run_distill(const DistillOpts& o, const Common& c) {
  using namespace duo;
  if (o.corpus.empty() || o.model.empty() || o.out.empty()) {
    throw Error(ErrorKind::kParameter, "distill needs --corpus, --model and --out");
  }
  const Corpus corpus = load_corpus(o.corpus);
  auto student = load_model(o.model);
  DcdConfig cfg = o.dcd;
  cfg.teacher_mode = parse_teacher_mode(o.teacher);
  cfg.kl_direction = parse_kl_direction(o.kl);
  cfg.seed = c.seed;
  std::optional<DcdEval> eval;
  if (!o.eval_T.empty()) {
    eval.emplace();
    eval->T_list = o.eval_T;
    eval->n_samples = o.eval_n;
    eval->data_dist = empirical_distribution(corpus.seqs, corpus.K, corpus.L);
    if (o.eval_schedule == "via-transform") {
      eval->schedule = Schedule::via_transform(table_for(corpus.K, o.table, o.N, c.jobs));
    } else if (o.eval_schedule != "linear") {
      throw Error(ErrorKind::kParameter, "unknown schedule: " + o.eval_schedule);
    }
  }
  DcdResult res = dcd_train(cfg, corpus.seqs, *student, eval ? &*eval : nullptr);
  student->params() = res.ema_params;
  save_model(*student, o.out);
  if (!o.metrics.empty()) {
    auto os = io::open_out(o.metrics, false);
    write_metrics_csv(os, res.metrics);
  }
  for (const auto& w : res.metrics.warnings) std::cerr << "warning: " << w << "\n";
  json j{{"model", o.out}, {"round_loss", res.metrics.round_loss}, {"round_seconds", res.metrics.round_seconds}};
  if (eval) j["round_tv"] = res.metrics.round_tv;
  std::cout << j.dump() << "\n";
  return kExitOk;
}

// --------------------------------------------------------------- sample

struct SampleOpts {
  std::string model;
  std::size_t L = 0;
  std::size_t T = 16;
  std::size_t n = 100;
  bool greedy_tail = false;
  std::string schedule = "via-transform";
  std::string table;
  std::size_t N = 10001;
  std::string out;
};

int run_sample(const SampleOpts& o, const Common& c) {
  using namespace duo;
  if (o.model.empty() || o.L == 0) throw Error(ErrorKind::kParameter, "sample needs --model and --L >= 1");
  const auto model = load_model(o.model);
  const std::size_t K = model->vocab_size();
  Schedule s = Schedule::linear_discrete();
  if (o.schedule == "via-transform") {
    s = Schedule::via_transform(table_for(K, o.table, o.N, c.jobs));
  } else if (o.schedule != "linear") {
    throw Error(ErrorKind::kParameter, "unknown schedule: " + o.schedule);
  }
  const auto samples = ancestral_generate_batch(*model, K, o.L, o.T, o.greedy_tail, o.n, CounterRng(c.seed), s);
  const SampleHeader h{K, o.L, o.T, o.greedy_tail, c.seed};
  if (o.out.empty()) {
    write_samples(std::cout, h, samples);
  } else {
    auto os = io::open_out(o.out, false);
    write_samples(os, h, samples);
  }
  return kExitOk;
}

// --------------------------------------------------------------- report

struct ReportOpts {
  std::vector<std::string> inputs;
  std::string out;
};

void report_jsonl(std::istream& is, const std::string& path, std::ostream& os) {
  std::size_t pass = 0, fail = 0, inconclusive = 0, ln = 0;
  std::string line;
  os << "## " << path << "\n";
  os << std::left << std::setw(40) << "name" << std::setw(16) << "statistic" << std::setw(16) << "threshold"
     << "status\n";
  while (std::getline(is, line)) {
    ++ln;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw duo::ParseError(ln, "not a JSON object in " + path);
    }
    const std::string status = j.value("status", j.value("pass", false) ? "pass" : "fail");
    (status == "pass" ? pass : status == "inconclusive" ? inconclusive : fail) += 1;
    os << std::left << std::setw(40) << j.value("name", "?") << std::setw(16) << j.value("statistic", 0.0)
       << std::setw(16) << j.value("threshold", 0.0) << status << "\n";
  }
  os << "total " << (pass + fail + inconclusive) << ": pass " << pass << ", fail " << fail << ", inconclusive "
     << inconclusive << "\n";
}

void report_csv(std::istream& is, const std::string& path, std::ostream& os) {
  std::string line;
  std::getline(is, line);
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  const auto col = [&](const std::string& name) {
    const auto it = std::find(cols.begin(), cols.end(), name);
    return it == cols.end() ? cols.size() : static_cast<std::size_t>(it - cols.begin());
  };
  const std::size_t ir = col("round"), il = col("loss");
  if (il == cols.size()) throw duo::ParseError(1, "no loss column in " + path);
  struct Agg {
    std::size_t n = 0;
    double sum = 0.0;
    std::vector<std::string> last;
  };
  std::map<std::string, Agg> rounds;
  std::size_t ln = 1;
  while (std::getline(is, line)) {
    ++ln;
    if (line.empty()) continue;
    std::vector<std::string> v;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) v.push_back(f);
    while (v.size() < cols.size()) v.emplace_back();
    const std::string key = ir < cols.size() ? v[ir] : "all";
    Agg& a = rounds[key];
    a.n += 1;
    try {
      a.sum += std::stod(v[il]);
    } catch (const std::exception&) {
      throw duo::ParseError(ln, "bad loss value in " + path);
    }
    bool any = false;
    for (std::size_t i = 0; i < cols.size(); ++i) any = any || (cols[i].rfind("tv_", 0) == 0 && !v[i].empty());
    if (any) a.last = v;
  }
  os << "## " << path << "\n" << std::left << std::setw(8) << "round" << std::setw(10) << "steps" << std::setw(16)
     << "mean_loss";
  for (const auto& c : cols) {
    if (c.rfind("tv_", 0) == 0) os << std::setw(12) << c;
  }
  os << "\n";
  for (const auto& [k, a] : rounds) {
    os << std::left << std::setw(8) << k << std::setw(10) << a.n << std::setw(16) << a.sum / static_cast<double>(a.n);
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (cols[i].rfind("tv_", 0) == 0) os << std::setw(12) << (a.last.empty() ? "" : a.last[i]);
    }
    os << "\n";
  }
}

int run_report(const ReportOpts& o, const Common&) {
  if (o.inputs.empty()) throw duo::Error(duo::ErrorKind::kParameter, "report needs --in");
  std::ofstream file;
  if (!o.out.empty()) file = duo::io::open_out(o.out, false);
  std::ostream& os = o.out.empty() ? std::cout : file;
  for (const auto& path : o.inputs) {
    auto is = duo::io::open_in(path, false);
    const int first = is.peek();
    if (first == '{') {
      report_jsonl(is, path, os);
    } else {
      report_csv(is, path, os);
    }
  }
  return kExitOk;
}

// --------------------------------------------------------------- corpus

struct CorpusOpts {
  std::string action;
  std::size_t K = 0;
  std::size_t L = 0;
  std::size_t n = 0;
  double concentration = 1.0;
  std::string docs;
  std::string text;
  std::string alphabet;
  std::string out;
};

int run_corpus(const CorpusOpts& o, const Common& c) {
  using namespace duo;
  if (o.out.empty()) throw Error(ErrorKind::kParameter, "corpus needs --out");
  Corpus corpus;
  if (o.action == "generate") {
    corpus = generate_markov(o.K, o.L, o.n, o.concentration, c.seed);
  } else if (o.action == "pack") {
    std::vector<std::vector<Token>> docs;
    std::string line;
    if (!o.text.empty()) {
      if (o.alphabet.empty()) throw Error(ErrorKind::kParameter, "pack --text needs --alphabet");
      const auto alpha = load_alphabet(o.alphabet, o.K);
      auto is = io::open_in(o.text, false);
      while (std::getline(is, line)) docs.push_back(encode_chars(line, alpha));
      corpus = pack(docs, o.K, o.L);
      corpus.alphabet = alpha;
    } else if (!o.docs.empty()) {
      auto is = io::open_in(o.docs, false);
      std::size_t ln = 0;
      while (std::getline(is, line)) {
        ++ln;
        std::istringstream ls(line);
        std::vector<Token> d;
        std::string tok;
        while (ls >> tok) {
          if (tok.find_first_not_of("0123456789") != std::string::npos) throw ParseError(ln, "bad token '" + tok + "'");
          d.push_back(static_cast<Token>(std::stoul(tok)));
        }
        docs.push_back(std::move(d));
      }
      corpus = pack(docs, o.K, o.L);
    } else {
      throw Error(ErrorKind::kParameter, "pack needs --docs or --text");
    }
  } else {
    throw Error(ErrorKind::kParameter, "corpus action must be generate or pack");
  }
  save_corpus(corpus, o.out);
  std::cout << json{{"path", o.out}, {"K", corpus.K}, {"L", corpus.L}, {"n", corpus.size()}}.dump() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"duo: Gaussian / uniform-state discrete diffusion duality toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config with flat keys; command-line flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);

  Common common;
  app.add_option("--seed", common.seed, "Seed for all randomness");
  app.add_option("--jobs", common.jobs, "Worker cap for parallel sections")->check(CLI::PositiveNumber);

  TableOpts table;
  auto* t = app.add_subcommand("table", "Build or check a transform table");
  t->add_option("--K", table.K, "Vocabulary size");
  t->add_option("--N", table.N, "Grid points");
  t->add_option("--tol", table.tol, "Quadrature relative tolerance");
  t->add_option("--out", table.out, "Output table path");
  t->add_option("--check", table.check, "Load and validate a table");

  VerifyOpts verify;
  auto* v = app.add_subcommand("verify", "Run verification suites as JSON lines");
  v->add_option("--suite", verify.suites, "Suites (all, duality, ode, elbo-equivalence, f-equality, nonmarkov, dpi, "
                                          "gradcheck, ddt, thm31)");
  v->add_option("--K", verify.K, "Vocabulary size (0 = suite default)");
  v->add_option("--n", verify.n, "Sample count (0 = suite default)");
  v->add_option("--N", verify.N, "Table grid points for the ode suite");
  v->add_option("--out", verify.out, "Write reports here instead of stdout");

  NelboOpts nelbo;
  auto* ne = app.add_subcommand("nelbo", "Monte Carlo NELBO of a denoiser on a corpus");
  ne->add_option("--corpus", nelbo.corpus, "Corpus path");
  ne->add_option("--model", nelbo.model, "Trained model path (overrides --denoiser)");
  ne->add_option("--denoiser", nelbo.denoiser, "bayes or uniform");
  ne->add_option("--latents", nelbo.latents, "discrete or gaussian");
  ne->add_option("--schedule", nelbo.schedule, "linear or via-transform");
  ne->add_option("--table", nelbo.table, "Table path (built when empty)");
  ne->add_option("--N", nelbo.N, "Grid points when building the table");
  ne->add_option("--n-mc", nelbo.n_mc, "Monte Carlo draws");
  ne->add_option("--time-mode", nelbo.time_mode, "iid, low-discrepancy or antithetic");

  TrainOpts train;
  auto* tr = app.add_subcommand("train", "Curriculum training by gradient descent");
  tr->add_option("--corpus", train.corpus, "Corpus path");
  tr->add_option("--out", train.out, "Output model path");
  tr->add_option("--model", train.model, "tabular or mlp");
  tr->add_option("--bins", train.bins, "Tabular time bins");
  tr->add_option("--hidden", train.hidden, "MLP hidden width");
  tr->add_option("--init-scale", train.init_scale, "MLP initial weight scale");
  tr->add_option("--steps", train.steps, "Gradient steps");
  tr->add_option("--batch", train.batch, "Batch size");
  tr->add_option("--lr", train.lr, "Learning rate");
  tr->add_option("--tau", train.tau, "Curriculum temperature");
  tr->add_option("--beta", train.beta, "Time window lower bound");
  tr->add_option("--gamma", train.gamma, "Time window upper bound");
  tr->add_flag("--derived-window", train.derived_window, "Window where T(1 - t) spans [0.05, 0.95]");
  tr->add_option("--table", train.table, "Table path (built when empty)");
  tr->add_option("--N", train.N, "Grid points when building the table");
  tr->add_option("--time-mode", train.time_mode, "iid, low-discrepancy or antithetic");
  tr->add_option("--log", train.log, "Per-step loss CSV");

  DistillOpts distill;
  auto* di = app.add_subcommand("distill", "Discrete Consistency Distillation");
  di->add_option("--corpus", distill.corpus, "Corpus path");
  di->add_option("--model", distill.model, "Student model path");
  di->add_option("--out", distill.out, "Output EMA model path");
  di->add_option("--rounds", distill.dcd.rounds, "Rounds N");
  di->add_option("--steps", distill.dcd.steps_per_round, "Steps per round M");
  di->add_option("--delta0", distill.dcd.delta0, "Initial step size");
  di->add_option("--lr", distill.dcd.lr, "Learning rate");
  di->add_option("--mu", distill.dcd.ema_decay, "EMA decay");
  di->add_option("--batch", distill.dcd.batch_size, "Batch size");
  di->add_option("--teacher", distill.teacher, "student-weights or ema-weights");
  di->add_option("--kl", distill.kl, "student-first or teacher-first");
  di->add_option("--metrics", distill.metrics, "Per-step metrics CSV");
  di->add_option("--eval-T", distill.eval_T, "Step counts for per-round TV evaluation");
  di->add_option("--eval-n", distill.eval_n, "Samples per evaluation");
  di->add_option("--eval-schedule", distill.eval_schedule, "linear or via-transform");
  di->add_option("--table", distill.table, "Table path (built when empty)");
  di->add_option("--N", distill.N, "Grid points when building the table");

  SampleOpts sample;
  auto* sa = app.add_subcommand("sample", "Ancestral sampling from a trained model");
  sa->add_option("--model", sample.model, "Model path");
  sa->add_option("--L", sample.L, "Sequence length");
  sa->add_option("--T", sample.T, "Sampling steps");
  sa->add_option("--n", sample.n, "Number of samples");
  sa->add_flag("--greedy-tail", sample.greedy_tail, "Greedy final step");
  sa->add_option("--schedule", sample.schedule, "linear or via-transform");
  sa->add_option("--table", sample.table, "Table path (built when empty)");
  sa->add_option("--N", sample.N, "Grid points when building the table");
  sa->add_option("--out", sample.out, "Output path (stdout when empty)");

  ReportOpts report;
  auto* re = app.add_subcommand("report", "Summarize JSON-lines reports or metrics CSV");
  re->add_option("--in", report.inputs, "Input files");
  re->add_option("--out", report.out, "Output path (stdout when empty)");

  CorpusOpts corpus;
  auto* co = app.add_subcommand("corpus", "Generate or pack a corpus");
  co->add_option("action", corpus.action, "generate or pack");
  co->add_option("--K", corpus.K, "Vocabulary size");
  co->add_option("--L", corpus.L, "Sequence length");
  co->add_option("--n", corpus.n, "Number of sequences (generate)");
  co->add_option("--concentration", corpus.concentration, "Dirichlet concentration (generate)");
  co->add_option("--docs", corpus.docs, "Docs file, one id list per line (pack)");
  co->add_option("--text", corpus.text, "Text file, one doc per line (pack)");
  co->add_option("--alphabet", corpus.alphabet, "Alphabet file id<TAB>character (pack)");
  co->add_option("--out", corpus.out, "Output corpus path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  print_config(app, sub);
  try {
    const std::string name = sub->get_name();
    if (name == "table") return run_table(table, common);
    if (name == "verify") return run_verify(verify, common);
    if (name == "nelbo") return run_nelbo(nelbo, common);
    if (name == "train") return run_train(train, common);
    if (name == "distill") return run_distill(distill, common);
    if (name == "sample") return run_sample(sample, common);
    if (name == "report") return run_report(report, common);
    if (name == "corpus") return run_corpus(corpus, common);
  } catch (const duo::Error& e) {
    std::cerr << "duo: " << e.what() << "\n";
    const auto k = e.kind();
    return (k == duo::ErrorKind::kParameter || k == duo::ErrorKind::kParse || k == duo::ErrorKind::kIo ||
            k == duo::ErrorKind::kDomain)
               ? kExitUsage
               : kExitSuiteFailed;
  }
  return kExitUsage;
}
