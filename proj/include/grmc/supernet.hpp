#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "grmc/dataset.hpp"
#include "grmc/random.hpp"
#include "grmc/search_space.hpp"

namespace grmc::nas {

enum class Mode { Search, Eval };

/// Two streams so that the hard outcome D and the conditional perturbations
/// can be matched independently across runs.
struct SamplingStreams {
  Rng outcome;
  Rng conditional;

  SamplingStreams(std::uint64_t seed, std::uint64_t key) : outcome(seed, {key, 0}), conditional(seed, {key, 1}) {}
};

/// Receives every mixing-weight vector a forward pass uses.
using WeightProbe = std::vector<Eigen::VectorXd>;

/// GRMC-relaxed choice weights for one logit row:
///   forward  w̄ = (1/K) Σ_k softmax((θ + G^k) / λ),  G^k ~ θ + G | D,  D ~ Gumbel-max(θ)
///   backward ∂L/∂θ = (1/K) Σ_k J_kᵀ ∂L/∂w̄   (conditional draws held fixed)
/// One D and one set of K draws per call.
Var relaxed_weights(Var logits, double lambda, int k_samples, SamplingStreams& streams);

/// Mixing weights for a logit row: relaxed in search mode, plain softmax(θ)
/// in eval mode (no sampling).
Var choice_weights(Var logits, double lambda, int k_samples, SamplingStreams* streams, Mode mode,
                   WeightProbe* probe = nullptr);

/// Σ_o w_o · o(x) over {Identity, Zero}.
Var mixed_edge_forward(Var x, Var edge_logits, double lambda, int k_samples, SamplingStreams* streams, Mode mode,
                       WeightProbe* probe = nullptr);

/// Tape handles for one cell's parameters.
struct CellBinding {
  std::vector<Var> gamma_rows;                        // per intermediate node
  std::vector<Var> beta_rows;                         // per node, 2 slots each (node-major)
  std::vector<std::vector<std::vector<Var>>> weights; // [node][second-level op][tensor]
};

/// Input node = Σ_edges mixed_edge(input_e); intermediate node m fuses its two
/// β-mixed slot inputs with the γ-mixture over second-level ops; the output
/// is the sum of the intermediate nodes.
Var cell_forward(std::span<const Var> inputs, std::span<const Var> edge_logits, const CellBinding& cell,
                 double lambda, int k_samples, SamplingStreams* streams, Mode mode, WeightProbe* probe = nullptr);

/// All tape handles of a bound SearchState.
struct Bindings {
  std::vector<Var> alpha_rows;
  std::vector<Var> gamma_rows;
  std::vector<Var> beta_rows;
  std::vector<Var> omega;  // same order as SearchState::omega
};

Bindings bind(ad::Tape& tape, const SearchState& state);

struct ForwardPass {
  Var logits;  // B × 2
  Var loss;    // scalar mean cross-entropy
};

/// Whole search network: features → first-level edges → cells → mean-pool
/// over length → linear head on the last cell's output.
ForwardPass supernet_forward(ad::Tape& tape, const SearchSpace& space, const Bindings& bindings, const Batch& batch,
                             Mode mode, SamplingStreams* streams, WeightProbe* probe = nullptr);

/// Gradient of the batch loss for every parameter group, from one forward pass.
struct StateGradient {
  Eigen::MatrixXd alpha;
  Eigen::MatrixXd gamma;
  Eigen::MatrixXd beta;
  std::vector<Tensor> omega;
  double loss{0};
};

StateGradient supernet_gradient(const SearchSpace& space, const SearchState& state, const Batch& batch, Mode mode,
                                SamplingStreams* streams);

}  // namespace grmc::nas
