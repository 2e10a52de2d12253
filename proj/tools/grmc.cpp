// grmc: estimator benchmarks, architecture search, retraining and the
// λ × K ablation grid on the synthetic bimodal task.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "grmc/bench.hpp"
#include "grmc/config.hpp"
#include "grmc/errors.hpp"
#include "grmc/genotype.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitAssertion = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file (all keys optional)");
  cmd->add_option("--seed", c.seed, "Overrides the config seed");
  cmd->add_option("--out-dir", c.out_dir, "Directory for all outputs")->capture_default_str();
  cmd->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
}

json load_config(const Common& c) { return c.config.empty() ? json::object() : grmc::config::read_json_file(c.config); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw grmc::FormatError("cannot write " + path.string());
  os << text;
}

grmc::RunManifest start_manifest(const std::string& command, json config, std::uint64_t seed) {
  grmc::RunManifest m;
  m.command = command;
  m.config = std::move(config);
  m.seed = seed;
  m.started = grmc::utc_timestamp();
  return m;
}

void finish_manifest(grmc::RunManifest& m, const fs::path& dir) {
  m.finished = grmc::utc_timestamp();
  write_text(dir / "manifest.json", m.to_json().dump(2) + "\n");
}

int cmd_bench(const Common& c) {
  auto cfg = grmc::config::bench_from_json(load_config(c));
  if (c.seed) cfg.seed = *c.seed;
  fs::create_directories(c.out_dir);
  auto manifest = start_manifest("estimator-bench", grmc::config::to_json(cfg), cfg.seed);
  const auto rows = grmc::run_estimator_bench(cfg, c.threads);
  const fs::path csv = fs::path(c.out_dir) / "bench.csv";
  write_text(csv, grmc::bench_csv(rows));
  manifest.add_output(csv);
  finish_manifest(manifest, c.out_dir);

  const bool ok = grmc::bench_passed(rows);
  for (const auto& r : rows) {
    if (!r.stats.ci_reliable) {
      std::cerr << fmt::format("note: {} trials is too few for reliable intervals\n", r.stats.trials);
      break;
    }
  }
  std::cout << fmt::format("{} rows written to {}; variance-ordering checks {}\n", rows.size(), csv.string(),
                           ok ? "passed" : "FAILED");
  return ok ? 0 : kExitAssertion;
}

int cmd_search(const Common& c, const std::string& resume, int stop_after) {
  grmc::SearchConfig cfg;
  std::optional<grmc::nas::SearchRun> run;
  grmc::SynthSplits data;
  if (!resume.empty()) {
    cfg = grmc::config::search_from_json(grmc::nas::SearchRun::checkpoint_metadata(resume));
    data = grmc::load_search_data(cfg);
    run.emplace(grmc::nas::SearchRun::resume(resume, data.train, data.val));
  } else {
    cfg = grmc::config::search_from_json(load_config(c));
    if (c.seed) cfg.seed = *c.seed;
    data = grmc::load_search_data(cfg);
    run.emplace(cfg.space, cfg.schedule, cfg.seed, data.train, data.val);
    run->set_metadata(grmc::config::to_json(cfg));
  }
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  auto manifest = start_manifest("search", grmc::config::to_json(cfg), cfg.seed);
  const fs::path ckpt = dir / "checkpoint.grck";

  int ran = 0;
  while (!run->finished() && (stop_after <= 0 || ran < stop_after)) {
    run->run_epoch();
    ++ran;
    const auto& h = run->history().back();
    std::cout << fmt::format("epoch {:3d}  E(alpha) {:.6f}  E(gamma) {:.6f}  train {:.4f}  val {:.4f}\n", h.epoch,
                             h.e_alpha, h.e_gamma, h.train_loss, h.val_loss);
    run->save_checkpoint(ckpt.string());
  }
  const fs::path history = dir / "history.csv";
  write_text(history, grmc::nas::history_csv(run->history()));
  manifest.add_output(history);
  manifest.add_output(ckpt);
  if (run->finished()) {
    auto g = grmc::nas::derive_architecture(run->space(), run->state(), run->seed(), run->epochs_done());
    g.entropy_history_ref = history.filename().string();
    const fs::path genotype = dir / "genotype.json";
    write_text(genotype, grmc::nas::serialize(g));
    manifest.add_output(genotype);
    std::cout << fmt::format("search {} after {} epochs; genotype written to {}\n",
                             run->converged() ? "converged" : "hit the epoch cap", run->epochs_done(), genotype.string());
  } else {
    std::cout << fmt::format("paused after epoch {}; resume with --resume {}\n", run->epochs_done(), ckpt.string());
  }
  finish_manifest(manifest, dir);
  return 0;
}

int cmd_eval(const Common& c, const std::string& genotype_path) {
  auto cfg = grmc::config::search_from_json(load_config(c));
  if (c.seed) cfg.seed = *c.seed;
  std::ifstream is(genotype_path);
  if (!is) throw grmc::ConfigError("cannot open genotype " + genotype_path);
  std::stringstream ss;
  ss << is.rdbuf();
  const auto g = grmc::nas::parse_genotype(ss.str());
  const auto data = grmc::load_search_data(cfg);
  fs::create_directories(c.out_dir);
  auto manifest = start_manifest("eval", grmc::config::to_json(cfg), cfg.seed);
  grmc::Rng rng(cfg.seed, {3});
  const auto report = grmc::nas::retrain_and_eval(g, data.train, data.test, cfg.retrain, rng);
  const fs::path out = fs::path(c.out_dir) / "metrics.json";
  write_text(out, grmc::to_json(report).dump(2) + "\n");
  manifest.add_output(out);
  finish_manifest(manifest, c.out_dir);
  std::cout << fmt::format("AUC {:.4f}  ACC {:.4f}  parameters {}\n", report.auc, report.acc, report.parameter_count);
  return 0;
}

int cmd_ablation(const Common& c) {
  auto cfg = grmc::config::ablation_from_json(load_config(c));
  if (c.seed) cfg.base.seed = *c.seed;
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  auto manifest = start_manifest("ablation", grmc::config::to_json(cfg), cfg.base.seed);
  const auto rows = grmc::run_ablation(cfg, dir, c.threads);
  const fs::path csv = dir / "ablation.csv";
  write_text(csv, grmc::ablation_csv(rows));
  const std::string trend = grmc::ablation_trend_report(rows);
  write_text(dir / "trend.txt", trend);
  manifest.add_output(csv);
  manifest.add_output(dir / "trend.txt");
  for (const auto& r : rows) {
    manifest.add_output(dir / fmt::format("history_l{}_k{}.csv", r.lambda, r.k));
    if (!r.genotype_file.empty()) manifest.add_output(dir / r.genotype_file);
  }
  finish_manifest(manifest, dir);
  std::cout << grmc::ablation_csv(rows) << trend;
  return 0;
}

int cmd_gen_data(const Common& c) {
  const json j = load_config(c);
  auto cfg = grmc::config::synth_from_json(j.contains("data") && j.size() == 1 ? j.at("data") : j);
  if (c.seed) cfg.seed = *c.seed;
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  auto manifest = start_manifest("gen-data", grmc::config::to_json(cfg), cfg.seed);
  const auto splits = grmc::generate_synthetic(cfg);
  const std::pair<const char*, const grmc::Dataset*> parts[] = {
      {"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}};
  for (const auto& [name, d] : parts) {
    grmc::save_dataset(*d, dir, name);
    for (std::size_t f = 0; f < d->features.size(); ++f) manifest.add_output(dir / fmt::format("{}_node{}.grnt", name, f + 1));
    manifest.add_output(dir / fmt::format("{}_labels.csv", name));
  }
  finish_manifest(manifest, dir);
  std::cout << fmt::format("wrote {}/{}/{} samples to {}\n", splits.train.size(), splits.val.size(), splits.test.size(),
                           dir.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gumbel-Rao gradient estimators and bimodal fusion architecture search"};
  app.require_subcommand(1);

  Common bench, search, eval, ablation, gen;
  std::string resume, genotype;
  int stop_after = 0;

  auto* b = app.add_subcommand("estimator-bench", "STGS vs GRMC-K gradient statistics over the λ × K grid");
  add_common(b, bench);
  auto* s = app.add_subcommand("search", "Bilevel architecture search with entropy-based stopping");
  add_common(s, search);
  s->add_option("--resume", resume, "Continue from a checkpoint written by an earlier search");
  s->add_option("--stop-after", stop_after, "Pause after this many epochs (0 = run to the end)");
  auto* e = app.add_subcommand("eval", "Retrain a genotype from scratch and score the test split");
  add_common(e, eval);
  e->add_option("--genotype", genotype, "Genotype JSON")->required();
  auto* a = app.add_subcommand("ablation", "Search + retrain over the λ × K grid");
  add_common(a, ablation);
  auto* g = app.add_subcommand("gen-data", "Write the synthetic bimodal splits as GRNT files + label CSVs");
  add_common(g, gen);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*b) return cmd_bench(bench);
    if (*s) return cmd_search(search, resume, stop_after);
    if (*e) return cmd_eval(eval, genotype);
    if (*a) return cmd_ablation(ablation);
    if (*g) return cmd_gen_data(gen);
  } catch (const grmc::ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return EXIT_FAILURE;
  }
  return EXIT_FAILURE;
}
