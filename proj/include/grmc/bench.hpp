#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grmc/estimators.hpp"
#include "grmc/retrain.hpp"
#include "grmc/synthetic.hpp"
#include "grmc/trainer.hpp"

namespace grmc {

/// f(D) = DᵀQD + cᵀD; Q empty means linear.
struct ObjectiveSpec {
  std::string name;
  std::vector<double> c;
  std::vector<double> q;  // row-major N × N, or empty

  std::unique_ptr<DownstreamObjective> build() const;
  bool operator==(const ObjectiveSpec&) const = default;
};

struct EstimatorBenchConfig {
  std::vector<double> lambdas{0.1, 0.5, 1.0};
  std::vector<int> ks{10, 100, 1000};
  std::size_t trials{100000};
  std::uint64_t seed{2024};
  std::vector<double> logits{1.0, 0.5, 0.0, -0.5, -1.0};
  std::vector<ObjectiveSpec> objectives;  // empty → default linear and quadratic
  double mean_gap_limit{3.0};             // pooled standard errors

  void validate() const;
  std::vector<ObjectiveSpec> resolved_objectives() const;
  bool operator==(const EstimatorBenchConfig&) const = default;
};

struct BenchRow {
  std::string objective;
  EstimatorKind estimator;
  double lambda;
  int k;  // 0 for STGS
  EstimatorStats stats;
  double mean_gap{0};          // vs STGS at the same λ, in pooled standard errors
  bool variance_ok{true};      // trace variance ≤ STGS
  bool mean_ok{true};          // mean gap ≤ limit
  bool mse_monotone_ok{true};  // MSE ≤ previous K within the 95% interval
  bool check() const { return variance_ok && mean_ok && mse_monotone_ok; }
};

/// One STGS row then one GRMC row per K, for every (objective, λ). All rows of
/// an objective share the trial streams, so comparisons are at matched seeds.
std::vector<BenchRow> run_estimator_bench(const EstimatorBenchConfig& cfg, int threads);

/// Columns: estimator,lambda,K,trials,seed,bias_sq,variance,mse, then
/// objective,variance_se,mse_se,mean_gap,ci_reliable,check.
std::string bench_csv(const std::vector<BenchRow>& rows);
/// Inverse of bench_csv for the scalar columns; per-coordinate vectors are not
/// part of the CSV and come back empty. A "fail" check clears all three flags.
std::vector<BenchRow> parse_bench_csv(const std::string& text);
bool bench_passed(const std::vector<BenchRow>& rows);

/// Feature files for the three splits; see load_dataset.
struct FileDataConfig {
  std::vector<std::string> train_features, val_features, test_features;
  std::string train_labels, val_labels, test_labels;
  bool operator==(const FileDataConfig&) const = default;
};

struct SearchConfig {
  SynthTaskConfig data;
  std::optional<FileDataConfig> files;  // replaces the synthetic task when set
  nas::SearchSpaceConfig space;
  nas::TrainSchedule schedule;
  nas::RetrainSchedule retrain;
  std::uint64_t seed{7};
  bool operator==(const SearchConfig&) const = default;
};

/// Synthetic splits, or the configured files (validated against the space).
SynthSplits load_search_data(const SearchConfig& cfg);

struct AblationConfig {
  SearchConfig base;
  std::vector<double> lambdas{0.1, 0.5, 1.0};
  std::vector<int> ks{10, 100, 1000};
  bool operator==(const AblationConfig&) const = default;
};

struct AblationRow {
  double lambda;
  int k;
  std::uint64_t seed;
  int epochs;
  bool converged;
  MetricsReport metrics;
  std::string genotype_file;  // empty when the derived genotype was degenerate
};

/// Search + derive + retrain per grid cell, cells in parallel; each cell's
/// seed is derived from (base seed, cell index). Genotypes are written to
/// `out_dir`/genotype_l<λ>_k<K>.json and histories to history_l<λ>_k<K>.csv;
/// a degenerate cell keeps its history but gets no genotype and zero metrics.
std::vector<AblationRow> run_ablation(const AblationConfig& cfg, const std::filesystem::path& out_dir, int threads);

/// Columns: lambda,K,seed,epochs,converged,auc,acc,parameter_count,genotype_file.
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::vector<AblationRow> parse_ablation_csv(const std::string& text);

/// Per-λ parameter-count trend across K, set against the reference pattern
/// 341760 → 205565 → 189574 (λ = 0.1). Observational text only.
std::string ablation_trend_report(const std::vector<AblationRow>& rows);

/// Command, config snapshot, seed, timestamps and SHA-256 of every output.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed{0};
  std::string started;
  std::string finished;
  std::vector<std::pair<std::string, std::string>> outputs;  // file name → hex digest

  void add_output(const std::filesystem::path& file);
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  /// True iff every listed file under `dir` still has its recorded digest.
  bool verify(const std::filesystem::path& dir) const;
  bool operator==(const RunManifest&) const = default;
};

std::string sha256_file(const std::filesystem::path& file);
std::string utc_timestamp();

}  // namespace grmc
