#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "grmc/dataset.hpp"
#include "grmc/supernet.hpp"

namespace grmc::nas {

struct TrainSchedule {
  int max_epochs{100};
  int batch_size{32};
  double weight_lr{3e-3};
  // With ε well above the surrogate-gradient noise the architecture update is
  // ≈ (arch_lr/arch_eps)·m̂ and dies out once a logit row saturates, which is
  // what lets the entropy actually settle.
  double arch_lr{10.0};
  double weight_decay{1e-3};   // ω only
  double arch_weight_decay{0.0};
  double arch_beta1{0.9};
  double arch_eps{0.1};
  double entropy_tolerance{1e-3};
  int entropy_patience{5};
  bool train_omega{true};
  bool train_alpha{true};
  bool train_beta{true};
  bool train_gamma{true};

  void validate() const;
  bool operator==(const TrainSchedule&) const = default;
};

/// Adam over a list of flat parameter arrays. L2 weight decay is folded into
/// the gradient.
class Adam {
 public:
  Adam() = default;
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Eigen::Map<Eigen::ArrayXd>>& params, const std::vector<Eigen::ArrayXd>& grads, double lr,
            double weight_decay);

  std::int64_t steps() const { return t_; }
  std::vector<Eigen::ArrayXd>& first_moments() { return m_; }
  std::vector<Eigen::ArrayXd>& second_moments() { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  double beta1_{0.9}, beta2_{0.999}, eps_{1e-8};
  std::int64_t t_{0};
  std::vector<Eigen::ArrayXd> m_, v_;
};

struct StepLosses {
  double train_loss{0};
  double val_loss{0};
};

/// Alternating updates: ω on the training batch, then (α, β, γ) on the
/// validation batch, each from its own search-mode forward pass.
class BilevelTrainer {
 public:
  BilevelTrainer(SearchSpace space, SearchState state, TrainSchedule schedule);

  StepLosses step(const Batch& train, const Batch& val, SamplingStreams& streams);

  const SearchSpace& space() const { return space_; }
  const SearchState& state() const { return state_; }
  SearchState& state() { return state_; }
  const TrainSchedule& schedule() const { return schedule_; }
  std::int64_t steps_taken() const { return steps_; }

  Adam& weight_optimizer() { return weight_opt_; }
  Adam& arch_optimizer() { return arch_opt_; }
  void set_steps_taken(std::int64_t s) { steps_ = s; }

 private:
  SearchSpace space_;
  SearchState state_;
  TrainSchedule schedule_;
  Adam weight_opt_;
  Adam arch_opt_;
  std::int64_t steps_{0};
};

struct EpochRecord {
  int epoch{0};
  double e_alpha{0};
  double e_gamma{0};
  double train_loss{0};
  double val_loss{0};
};

/// A bilevel search over a fixed train/validation split with entropy-based
/// stopping: stop once both epoch-averaged E(α) and E(γ) move by less than
/// the tolerance for `entropy_patience` consecutive epochs, or at max_epochs.
class SearchRun {
 public:
  SearchRun(SearchSpaceConfig space, TrainSchedule schedule, std::uint64_t seed, const Dataset& train,
            const Dataset& val);

  /// Runs one epoch; false once the run has stopped.
  bool run_epoch();
  /// Runs to completion; `on_epoch` is called after every epoch.
  void run(const std::function<void(const SearchRun&)>& on_epoch = {});

  bool finished() const { return finished_; }
  bool converged() const { return converged_; }
  int epochs_done() const { return static_cast<int>(history_.size()); }
  std::uint64_t seed() const { return seed_; }

  const BilevelTrainer& trainer() const { return trainer_; }
  const SearchState& state() const { return trainer_.state(); }
  const SearchSpace& space() const { return trainer_.space(); }
  const TrainSchedule& schedule() const { return trainer_.schedule(); }
  const std::vector<EpochRecord>& history() const { return history_; }
  /// Serialised genotype after every epoch (empty string when degenerate).
  /// Entry i belongs to epoch i+1; the provenance epoch is left at 0 so that
  /// equal architectures serialise identically.
  const std::vector<std::string>& genotype_trace() const { return genotype_trace_; }

  /// Caller-owned JSON carried through checkpoints (e.g. the data config).
  const nlohmann::json& metadata() const { return metadata_; }
  void set_metadata(nlohmann::json m) { metadata_ = std::move(m); }

  /// Everything needed to continue bit-identically: state, optimiser
  /// moments, RNG positions, history and stopping counters.
  void save_checkpoint(const std::string& path) const;
  static SearchRun resume(const std::string& path, const Dataset& train, const Dataset& val);
  /// Metadata stored in a checkpoint, without restoring the run.
  static nlohmann::json checkpoint_metadata(const std::string& path);

 private:
  SearchRun(BilevelTrainer trainer, std::uint64_t seed, const Dataset& train, const Dataset& val);

  BilevelTrainer trainer_;
  std::uint64_t seed_;
  const Dataset* train_;
  const Dataset* val_;
  SamplingStreams streams_;
  Rng shuffle_rng_;
  std::vector<EpochRecord> history_;
  std::vector<std::string> genotype_trace_;
  int stable_epochs_{0};
  bool finished_{false};
  bool converged_{false};
  nlohmann::json metadata_ = nlohmann::json::object();
};

/// CSV with header epoch,E_alpha,E_gamma,train_loss,val_loss.
std::string history_csv(const std::vector<EpochRecord>& history);
std::vector<EpochRecord> parse_history_csv(const std::string& text);

}  // namespace grmc::nas
