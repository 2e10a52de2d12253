#include "grmc/supernet.hpp"

#include <map>

#include <fmt/format.h>

#include "grmc/gumbel.hpp"

namespace grmc::nas {

Var relaxed_weights(Var logits, double lambda, int k_samples, SamplingStreams& streams) {
  if (k_samples < 1) throw DomainError("relaxed_weights: K must be >= 1");
  if (!(lambda > 0.0)) throw DomainError("relaxed_weights: temperature must be > 0");
  const Eigen::VectorXd theta = logits.value().data().matrix();
  const CategoricalLogits<double> cat(theta);
  const Eigen::Index n = theta.size();

  const auto outcome = gumbel_max_sample(cat, streams.outcome);
  // Since vᵀJ_k = (s_k ⊙ v - s_k s_kᵀ v) / λ, the backward pass only needs the
  // first two moments of the K relaxed samples.
  Eigen::VectorXd mean_s = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd mean_ss = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < k_samples; ++k) {
    const auto perturbed = conditional_gumbel_sample(cat, outcome.index, streams.conditional);
    const Eigen::VectorXd s = tempered_softmax(perturbed.values, lambda);
    mean_s += s;
    mean_ss.noalias() += s * s.transpose();
  }
  mean_s /= static_cast<double>(k_samples);
  mean_ss /= static_cast<double>(k_samples);

  Tensor out({n}, mean_s.array());
  return logits.tape->record(std::move(out), {logits},
                             [logits, mean_s, mean_ss, lambda](ad::Tape& tp, std::size_t self) {
                               const Eigen::VectorXd g = tp.grad_buffer(self).matrix();
                               const Eigen::VectorXd d = (mean_s.cwiseProduct(g) - mean_ss * g) / lambda;
                               tp.accumulate(logits.id, d.array());
                             });
}

Var choice_weights(Var logits, double lambda, int k_samples, SamplingStreams* streams, Mode mode, WeightProbe* probe) {
  Var w;
  if (mode == Mode::Search) {
    if (streams == nullptr) throw ContractError("search-mode forward needs sampling streams");
    w = relaxed_weights(logits, lambda, k_samples, *streams);
  } else {
    w = ad::softmax(logits);
  }
  if (probe) probe->push_back(w.value().data().matrix());
  return w;
}

Var mixed_edge_forward(Var x, Var edge_logits, double lambda, int k_samples, SamplingStreams* streams, Mode mode,
                       WeightProbe* probe) {
  if (edge_logits.value().size() != static_cast<ad::Index>(kFirstLevelOps.size())) {
    throw ShapeError(fmt::format("edge logits must have {} entries, got {}", kFirstLevelOps.size(),
                                 ad::to_string(edge_logits.shape())));
  }
  const Var w = choice_weights(edge_logits, lambda, k_samples, streams, mode, probe);
  return ad::add(ad::scale_by(identity(x), w, 0), ad::scale_by(zero(x), w, 1));
}

Var cell_forward(std::span<const Var> inputs, std::span<const Var> edge_logits, const CellBinding& cell,
                 double lambda, int k_samples, SamplingStreams* streams, Mode mode, WeightProbe* probe) {
  if (inputs.empty()) throw ContractError("cell_forward: need at least one predecessor");
  if (inputs.size() != edge_logits.size()) throw ContractError("cell_forward: one edge logit row per input");
  const std::size_t nodes = cell.gamma_rows.size();
  if (cell.beta_rows.size() != 2 * nodes || cell.weights.size() != nodes) {
    throw ContractError("cell_forward: inconsistent cell binding");
  }

  Var cell_input = mixed_edge_forward(inputs[0], edge_logits[0], lambda, k_samples, streams, mode, probe);
  for (std::size_t e = 1; e < inputs.size(); ++e) {
    cell_input = ad::add(cell_input, mixed_edge_forward(inputs[e], edge_logits[e], lambda, k_samples, streams, mode, probe));
  }

  Var previous = cell_input;
  Var output;
  for (std::size_t m = 0; m < nodes; ++m) {
    std::array<Var, 2> slot;
    for (std::size_t s = 0; s < 2; ++s) {
      const Var wb = choice_weights(cell.beta_rows[2 * m + s], lambda, k_samples, streams, mode, probe);
      slot[s] = ad::add(ad::scale_by(cell_input, wb, 0), ad::scale_by(previous, wb, 1));
    }
    const Var wg = choice_weights(cell.gamma_rows[m], lambda, k_samples, streams, mode, probe);
    Var mixed;
    for (std::size_t o = 0; o < kSecondLevelOps.size(); ++o) {
      const Var term = ad::scale_by(apply_binary(kSecondLevelOps[o], slot[0], slot[1], cell.weights[m][o]), wg,
                                    static_cast<ad::Index>(o));
      mixed = o == 0 ? term : ad::add(mixed, term);
    }
    output = m == 0 ? mixed : ad::add(output, mixed);
    previous = mixed;
  }
  return output;
}

Bindings bind(ad::Tape& tape, const SearchState& state) {
  Bindings b;
  auto rows = [&](const Eigen::MatrixXd& m, std::vector<Var>& out) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      out.push_back(tape.leaf(Tensor({m.cols()}, m.row(r).transpose().array())));
    }
  };
  rows(state.alpha, b.alpha_rows);
  rows(state.gamma, b.gamma_rows);
  rows(state.beta, b.beta_rows);
  for (const auto& [name, t] : state.omega) b.omega.push_back(tape.leaf(t));
  return b;
}

ForwardPass supernet_forward(ad::Tape& tape, const SearchSpace& space, const Bindings& bindings, const Batch& batch,
                             Mode mode, SamplingStreams* streams, WeightProbe* probe) {
  const auto& cfg = space.config();
  if (static_cast<int>(batch.features.size()) != space.num_features()) {
    throw ShapeError(fmt::format("batch has {} feature streams, search space expects {}", batch.features.size(),
                                 space.num_features()));
  }
  if (bindings.alpha_rows.size() != space.edges().size() ||
      static_cast<int>(bindings.gamma_rows.size()) != space.num_cell_nodes() ||
      static_cast<int>(bindings.beta_rows.size()) != space.num_slots()) {
    throw ShapeError("search state does not match the search space");
  }

  std::vector<Var> node_out;
  for (const auto& f : batch.features) node_out.push_back(tape.constant(f));

  // ω layout follows SearchState::initialize: per cell, per node, per op, then head.
  std::size_t cursor = 0;
  for (int c = 0; c < cfg.n_cells; ++c) {
    CellBinding cell;
    for (int m = 0; m < cfg.nodes_per_cell; ++m) {
      cell.gamma_rows.push_back(bindings.gamma_rows.at(static_cast<std::size_t>(space.node_row(c, m))));
      for (int s = 0; s < 2; ++s) {
        cell.beta_rows.push_back(bindings.beta_rows.at(static_cast<std::size_t>(space.slot_row(c, m, s))));
      }
      std::vector<std::vector<Var>> per_op;
      for (auto op : kSecondLevelOps) {
        std::vector<Var> w;
        for (std::size_t i = 0; i < describe(op, cfg.channels).weight_shapes.size(); ++i) {
          w.push_back(bindings.omega.at(cursor++));
        }
        per_op.push_back(std::move(w));
      }
      cell.weights.push_back(std::move(per_op));
    }
    std::vector<Var> inputs, logits;
    for (int e : space.edges_into(c)) {
      inputs.push_back(node_out.at(static_cast<std::size_t>(space.edges()[static_cast<std::size_t>(e)].src)));
      logits.push_back(bindings.alpha_rows.at(static_cast<std::size_t>(e)));
    }
    node_out.push_back(cell_forward(inputs, logits, cell, cfg.lambda, cfg.k_samples, streams, mode, probe));
  }
  const Var head_w = bindings.omega.at(cursor++);
  const Var head_b = bindings.omega.at(cursor++);
  if (cursor != bindings.omega.size()) throw ShapeError("search state holds unexpected weights");

  ForwardPass pass;
  pass.logits = ad::linear(ad::mean_last(node_out.back()), head_w, head_b);
  pass.loss = ad::cross_entropy(pass.logits, batch.labels);
  return pass;
}

StateGradient supernet_gradient(const SearchSpace& space, const SearchState& state, const Batch& batch, Mode mode,
                                SamplingStreams* streams) {
  ad::Tape tape;
  const Bindings b = bind(tape, state);
  const ForwardPass pass = supernet_forward(tape, space, b, batch, mode, streams);
  tape.backward(pass.loss);

  StateGradient g;
  g.loss = pass.loss.value()[0];
  auto rows = [](const std::vector<Var>& vars, Eigen::Index cols) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(vars.size()), cols);
    for (std::size_t r = 0; r < vars.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = vars[r].grad().data().matrix().transpose();
    return m;
  };
  g.alpha = rows(b.alpha_rows, state.alpha.cols());
  g.gamma = rows(b.gamma_rows, state.gamma.cols());
  g.beta = rows(b.beta_rows, state.beta.cols());
  for (const auto& v : b.omega) g.omega.push_back(v.grad());
  return g;
}

}  // namespace grmc::nas
