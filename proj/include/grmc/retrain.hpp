#pragma once

#include <vector>

#include "grmc/dataset.hpp"
#include "grmc/genotype.hpp"
#include "grmc/metrics.hpp"

namespace grmc::nas {

struct RetrainSchedule {
  int epochs{100};
  int batch_size{64};
  double lr{3e-3};
  double weight_decay{1e-3};

  void validate() const;
  bool operator==(const RetrainSchedule&) const = default;
};

/// The sampling-free network a genotype describes, with fresh weights.
class DiscreteNetwork {
 public:
  DiscreteNetwork(const Genotype& genotype, Rng& rng);

  /// B × 2 class logits.
  Var forward(ad::Tape& tape, const std::vector<Var>& params, const Batch& batch) const;

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  ad::Index parameter_count() const;

 private:
  struct Node {
    Primitive op;
    std::array<SlotSource, 2> inputs;
    std::vector<std::size_t> weights;  // indices into params_
  };
  Genotype genotype_;
  SearchSpace space_;
  std::vector<std::vector<int>> kept_sources_;  // per cell
  std::vector<std::vector<Node>> nodes_;        // per cell
  std::vector<Tensor> params_;
  std::size_t head_w_{0}, head_b_{0};
};

/// Trains the discrete network from scratch on `train` and scores `test`.
MetricsReport retrain_and_eval(const Genotype& genotype, const Dataset& train, const Dataset& test,
                               const RetrainSchedule& schedule, Rng& rng);

}  // namespace grmc::nas
