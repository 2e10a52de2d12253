#include "grmc/bench.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "grmc/errors.hpp"

namespace grmc {

std::unique_ptr<DownstreamObjective> ObjectiveSpec::build() const {
  const auto n = static_cast<Eigen::Index>(c.size());
  const Eigen::VectorXd cv = Eigen::Map<const Eigen::VectorXd>(c.data(), n);
  if (q.empty()) return std::make_unique<LinearObjective>(cv);
  if (static_cast<Eigen::Index>(q.size()) != n * n) {
    throw ConfigError(fmt::format("objective {}: q needs {} entries, got {}", name, n * n, q.size()));
  }
  Eigen::MatrixXd qm(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) qm(i, j) = q[static_cast<std::size_t>(i * n + j)];
  }
  return std::make_unique<QuadraticObjective>(qm, cv);
}

void EstimatorBenchConfig::validate() const {
  if (lambdas.empty() || ks.empty()) throw ConfigError("bench: lambdas and ks must be non-empty");
  for (double l : lambdas) {
    if (!(l > 0.0)) throw ConfigError("bench: every lambda must be > 0");
  }
  for (int k : ks) {
    if (k < 1) throw ConfigError("bench: every K must be >= 1");
  }
  if (trials < 2) throw ConfigError("bench: at least 2 trials are needed");
  if (logits.size() < 2) throw ConfigError("bench: at least 2 categories are needed");
  for (const auto& o : resolved_objectives()) {
    if (o.c.size() != logits.size()) {
      throw ConfigError(fmt::format("bench: objective {} has {} payoffs for {} categories", o.name, o.c.size(),
                                    logits.size()));
    }
    o.build();
  }
  if (!(mean_gap_limit > 0.0)) throw ConfigError("bench: mean_gap_limit must be > 0");
}

std::vector<ObjectiveSpec> EstimatorBenchConfig::resolved_objectives() const {
  if (!objectives.empty()) return objectives;
  if (logits.size() != 5) {
    throw ConfigError("bench: default objectives are defined for 5 categories; configure objectives explicitly");
  }
  // clang-format off
  return {
      {"linear", {1.0, -2.0, 0.5, 3.0, -1.0}, {}},
      {"quadratic", {0.3, -0.2, 0.1, 0.4, -0.6},
       { 1.0,  0.5,  0.0, -0.3,  0.2,
         0.5, -1.0,  0.4,  0.0,  0.1,
         0.0,  0.4,  2.0,  0.3, -0.5,
        -0.3,  0.0,  0.3,  0.5,  0.6,
         0.2,  0.1, -0.5,  0.6, -1.5}},
  };
  // clang-format on
}

std::vector<BenchRow> run_estimator_bench(const EstimatorBenchConfig& cfg, int threads) {
  cfg.validate();
  const Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(cfg.logits.data(), static_cast<Eigen::Index>(cfg.logits.size()));
  const Logits logits(theta);
  const unsigned workers = static_cast<unsigned>(std::max(1, threads));
  std::vector<BenchRow> rows;
  for (const auto& spec : cfg.resolved_objectives()) {
    const auto obj = spec.build();
    for (double lambda : cfg.lambdas) {
      BenchRow base{spec.name, EstimatorKind::STGS, lambda, 0,
                    estimator_stats(*obj, logits, {EstimatorKind::STGS, lambda, 1}, cfg.trials, cfg.seed, workers)};
      rows.push_back(base);
      std::size_t prev = 0;  // index of the previous GRMC row, 0 = none
      for (int k : cfg.ks) {
        BenchRow r{spec.name, EstimatorKind::GRMC, lambda, k,
                   estimator_stats(*obj, logits, {EstimatorKind::GRMC, lambda, k}, cfg.trials, cfg.seed, workers)};
        r.mean_gap = max_standardized_mean_gap(r.stats, base.stats);
        r.variance_ok = r.stats.trace_variance <= base.stats.trace_variance;
        r.mean_ok = r.mean_gap <= cfg.mean_gap_limit;
        if (prev != 0) {
          const auto& p = rows[prev].stats;
          r.mse_monotone_ok = r.stats.mse <= p.mse + 1.96 * std::hypot(r.stats.mse_se, p.mse_se);
        }
        rows.push_back(r);
        prev = rows.size() - 1;
      }
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out =
      "estimator,lambda,K,trials,seed,bias_sq,variance,mse,objective,variance_se,mse_se,mean_gap,ci_reliable,check\n";
  for (const auto& r : rows) {
    const bool baseline = r.estimator == EstimatorKind::STGS;
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", to_string(r.estimator), r.lambda, r.k,
                       r.stats.trials, r.stats.seed, r.stats.bias_sq, r.stats.trace_variance, r.stats.mse, r.objective,
                       r.stats.trace_variance_se, r.stats.mse_se, r.mean_gap, r.stats.ci_reliable ? "true" : "false",
                       baseline ? "baseline" : (r.check() ? "pass" : "fail"));
  }
  return out;
}

std::vector<BenchRow> parse_bench_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) ||
      line != "estimator,lambda,K,trials,seed,bias_sq,variance,mse,objective,variance_se,mse_se,mean_gap,ci_reliable,check") {
    throw FormatError("bench CSV: unexpected header");
  }
  std::vector<BenchRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 14) throw FormatError("bench CSV: malformed row '" + line + "'");
    try {
      BenchRow r{f[8], estimator_kind_from_string(f[0]), std::stod(f[1]), std::stoi(f[2]), {}};
      r.stats.trials = std::stoull(f[3]);
      r.stats.seed = std::stoull(f[4]);
      r.stats.bias_sq = std::stod(f[5]);
      r.stats.trace_variance = std::stod(f[6]);
      r.stats.mse = std::stod(f[7]);
      r.stats.trace_variance_se = std::stod(f[9]);
      r.stats.mse_se = std::stod(f[10]);
      r.mean_gap = std::stod(f[11]);
      if (f[12] != "true" && f[12] != "false") throw FormatError("bad ci_reliable flag");
      r.stats.ci_reliable = f[12] == "true";
      const bool baseline = r.estimator == EstimatorKind::STGS;
      if (baseline ? f[13] != "baseline" : (f[13] != "pass" && f[13] != "fail")) throw FormatError("bad check");
      if (f[13] == "fail") r.variance_ok = r.mean_ok = r.mse_monotone_ok = false;
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError("bench CSV: malformed row '" + line + "'");
    }
  }
  return rows;
}

bool bench_passed(const std::vector<BenchRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const BenchRow& r) { return r.check(); });
}

SynthSplits load_search_data(const SearchConfig& cfg) {
  if (!cfg.files) return generate_synthetic(cfg.data);
  const auto& f = *cfg.files;
  const auto& s = cfg.space;
  auto paths = [](const std::vector<std::string>& v) { return std::vector<std::filesystem::path>(v.begin(), v.end()); };
  SynthSplits out;
  out.train = load_dataset(paths(f.train_features), f.train_labels, s.n_image_features, s.n_speech_features, s.channels,
                           s.length);
  out.val = load_dataset(paths(f.val_features), f.val_labels, s.n_image_features, s.n_speech_features, s.channels, s.length);
  out.test = load_dataset(paths(f.test_features), f.test_labels, s.n_image_features, s.n_speech_features, s.channels,
                          s.length);
  return out;
}

namespace {

template <class Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < count; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::vector<AblationRow> run_ablation(const AblationConfig& cfg, const std::filesystem::path& out_dir, int threads) {
  std::filesystem::create_directories(out_dir);
  const SynthSplits data = load_search_data(cfg.base);
  const std::size_t nk = cfg.ks.size();
  std::vector<AblationRow> rows(cfg.lambdas.size() * nk);

  parallel_for(rows.size(), threads, [&](std::size_t i) {
    AblationRow& row = rows[i];
    row.lambda = cfg.lambdas[i / nk];
    row.k = cfg.ks[i % nk];
    row.seed = Rng(cfg.base.seed, {static_cast<std::uint64_t>(i)}).next();
    nas::SearchSpaceConfig space = cfg.base.space;
    space.lambda = row.lambda;
    space.k_samples = row.k;
    nas::SearchRun run(space, cfg.base.schedule, row.seed, data.train, data.val);
    run.run();
    row.epochs = run.epochs_done();
    row.converged = run.converged();

    const std::string stem = fmt::format("l{}_k{}", row.lambda, row.k);
    const std::string history = "history_" + stem + ".csv";
    {
      std::ofstream os(out_dir / history);
      os << nas::history_csv(run.history());
    }
    nas::Genotype g;
    try {
      g = nas::derive_architecture(run.space(), run.state(), row.seed, row.epochs);
    } catch (const DegenerateGenotypeError&) {
      return;  // no genotype file, zero metrics
    }
    g.entropy_history_ref = history;
    row.genotype_file = "genotype_" + stem + ".json";
    {
      std::ofstream os(out_dir / row.genotype_file);
      os << nas::serialize(g);
    }
    Rng retrain_rng(row.seed, {3});
    row.metrics = nas::retrain_and_eval(g, data.train, data.test, cfg.base.retrain, retrain_rng);
  });
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "lambda,K,seed,epochs,converged,auc,acc,parameter_count,genotype_file\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.lambda, r.k, r.seed, r.epochs, r.converged ? "true" : "false",
                       r.metrics.auc, r.metrics.acc, r.metrics.parameter_count, r.genotype_file);
  }
  return out;
}

std::vector<AblationRow> parse_ablation_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "lambda,K,seed,epochs,converged,auc,acc,parameter_count,genotype_file") {
    throw FormatError("ablation CSV: unexpected header");
  }
  std::vector<AblationRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();  // degenerate rows have no genotype file
    if (f.size() != 9) throw FormatError("ablation CSV: malformed row '" + line + "'");
    try {
      AblationRow r{};
      r.lambda = std::stod(f[0]);
      r.k = std::stoi(f[1]);
      r.seed = std::stoull(f[2]);
      r.epochs = std::stoi(f[3]);
      if (f[4] != "true" && f[4] != "false") throw FormatError("bad converged flag");
      r.converged = f[4] == "true";
      r.metrics.auc = std::stod(f[5]);
      r.metrics.acc = std::stod(f[6]);
      r.metrics.parameter_count = std::stoll(f[7]);
      r.genotype_file = f[8];
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError("ablation CSV: malformed row '" + line + "'");
    }
  }
  return rows;
}

std::string ablation_trend_report(const std::vector<AblationRow>& rows) {
  std::string out = "parameter count by K (reference row at lambda=0.1: 341760 -> 205565 -> 189574, non-increasing)\n";
  std::vector<double> lambdas;
  for (const auto& r : rows) {
    if (std::find(lambdas.begin(), lambdas.end(), r.lambda) == lambdas.end()) lambdas.push_back(r.lambda);
  }
  for (double l : lambdas) {
    std::string seq;
    bool non_increasing = true;
    std::int64_t prev = -1;
    for (const auto& r : rows) {
      if (r.lambda != l) continue;
      if (r.genotype_file.empty()) {
        seq += fmt::format("{}degenerate(K={})", seq.empty() ? "" : " -> ", r.k);
        continue;
      }
      seq += fmt::format("{}{}(K={})", seq.empty() ? "" : " -> ", r.metrics.parameter_count, r.k);
      if (prev >= 0 && r.metrics.parameter_count > prev) non_increasing = false;
      prev = r.metrics.parameter_count;
    }
    out += fmt::format("lambda={}: {} : {}\n", l, seq,
                       non_increasing ? "non-increasing, matches the reference trend" : "differs from the reference trend");
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw FormatError("cannot open " + file.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(is.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::add_output(const std::filesystem::path& file) {
  outputs.emplace_back(file.filename().string(), sha256_file(file));
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [name, digest] : outputs) out.push_back({{"file", name}, {"sha256", digest}});
  return {{"command", command}, {"config", config}, {"seed", seed}, {"started", started}, {"finished", finished},
          {"outputs", out}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.started = j.at("started").get<std::string>();
    m.finished = j.at("finished").get<std::string>();
    for (const auto& o : j.at("outputs")) {
      m.outputs.emplace_back(o.at("file").get<std::string>(), o.at("sha256").get<std::string>());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

bool RunManifest::verify(const std::filesystem::path& dir) const {
  for (const auto& [name, digest] : outputs) {
    if (!std::filesystem::exists(dir / name) || sha256_file(dir / name) != digest) return false;
  }
  return true;
}

}  // namespace grmc
