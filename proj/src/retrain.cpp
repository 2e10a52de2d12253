#include "grmc/retrain.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "grmc/trainer.hpp"

namespace grmc::nas {

void RetrainSchedule::validate() const {
  if (epochs < 1 || batch_size < 1) throw ConfigError("retrain: epochs and batch size must be >= 1");
  if (lr < 0.0 || weight_decay < 0.0) throw ConfigError("retrain: lr and weight decay must be >= 0");
}

DiscreteNetwork::DiscreteNetwork(const Genotype& genotype, Rng& rng) : genotype_(genotype), space_(genotype.topology) {
  const auto& cfg = space_.config();
  if (genotype_.first_level_edges.size() != space_.edges().size() ||
      static_cast<int>(genotype_.cells.size()) != space_.num_cell_nodes()) {
    throw ShapeError("genotype does not match its own topology");
  }
  for (int c = 0; c < cfg.n_cells; ++c) {
    std::vector<int> kept;
    for (int e : space_.edges_into(c)) {
      const auto& choice = genotype_.first_level_edges[static_cast<std::size_t>(e)];
      if (choice.kept) kept.push_back(choice.src);
    }
    if (kept.empty()) throw DegenerateGenotypeError(fmt::format("Cell{} keeps no input edge", c + 1));
    kept_sources_.push_back(std::move(kept));

    std::vector<Node> nodes;
    for (int m = 0; m < cfg.nodes_per_cell; ++m) {
      const auto& choice = genotype_.cells[static_cast<std::size_t>(space_.node_row(c, m))];
      Node n{choice.op, choice.inputs, {}};
      for (auto& w : instantiate(choice.op, cfg.channels, rng).weights) {
        n.weights.push_back(params_.size());
        params_.push_back(std::move(w));
      }
      nodes.push_back(std::move(n));
    }
    nodes_.push_back(std::move(nodes));
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
  Tensor hw({cfg.channels, 2}), hb({2});
  for (ad::Index i = 0; i < hw.size(); ++i) hw[i] = (2.0 * rng.uniform() - 1.0) * bound;
  for (ad::Index i = 0; i < hb.size(); ++i) hb[i] = (2.0 * rng.uniform() - 1.0) * bound;
  head_w_ = params_.size();
  params_.push_back(std::move(hw));
  head_b_ = params_.size();
  params_.push_back(std::move(hb));
}

ad::Index DiscreteNetwork::parameter_count() const {
  ad::Index n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

Var DiscreteNetwork::forward(ad::Tape& tape, const std::vector<Var>& params, const Batch& batch) const {
  if (static_cast<int>(batch.features.size()) != space_.num_features()) {
    throw ShapeError(fmt::format("batch has {} feature streams, genotype expects {}", batch.features.size(),
                                 space_.num_features()));
  }
  if (params.size() != params_.size()) throw ContractError("DiscreteNetwork: wrong parameter count");
  std::vector<Var> node_out;
  for (const auto& f : batch.features) node_out.push_back(tape.constant(f));

  for (std::size_t c = 0; c < nodes_.size(); ++c) {
    Var input = node_out.at(static_cast<std::size_t>(kept_sources_[c][0]));
    for (std::size_t i = 1; i < kept_sources_[c].size(); ++i) {
      input = ad::add(input, node_out.at(static_cast<std::size_t>(kept_sources_[c][i])));
    }
    Var previous = input, output;
    for (std::size_t m = 0; m < nodes_[c].size(); ++m) {
      const Node& n = nodes_[c][m];
      const Var x = n.inputs[0] == SlotSource::CellInput ? input : previous;
      const Var y = n.inputs[1] == SlotSource::CellInput ? input : previous;
      std::vector<Var> w;
      for (std::size_t idx : n.weights) w.push_back(params[idx]);
      const Var out = apply_binary(n.op, x, y, w);
      output = m == 0 ? out : ad::add(output, out);
      previous = out;
    }
    node_out.push_back(output);
  }
  return ad::linear(ad::mean_last(node_out.back()), params[head_w_], params[head_b_]);
}

namespace {

std::vector<double> positive_scores(const Tensor& logits) {
  std::vector<double> s(static_cast<std::size_t>(logits.dim(0)));
  for (ad::Index i = 0; i < logits.dim(0); ++i) {
    s[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(logits[2 * i] - logits[2 * i + 1]));
  }
  return s;
}

}  // namespace

MetricsReport retrain_and_eval(const Genotype& genotype, const Dataset& train, const Dataset& test,
                               const RetrainSchedule& schedule, Rng& rng) {
  schedule.validate();
  train.validate();
  test.validate();
  DiscreteNetwork net(genotype, rng);
  Adam opt;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = static_cast<std::size_t>(schedule.batch_size);
  std::size_t step = 0;

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t end = std::min(order.size(), begin + bs);
      const Batch b = make_batch(train, std::span<const std::size_t>(order.data() + begin, end - begin));
      ad::Tape tape;
      std::vector<Var> params;
      for (const auto& p : net.parameters()) params.push_back(tape.leaf(p));
      const Var loss = ad::cross_entropy(net.forward(tape, params, b), b.labels);
      if (!std::isfinite(loss.value()[0])) throw TrainingError("non-finite retraining loss", step);
      tape.backward(loss);

      std::vector<Eigen::Map<Eigen::ArrayXd>> maps;
      std::vector<Eigen::ArrayXd> grads;
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = net.parameters()[i];
        maps.emplace_back(p.data().data(), p.size());
        grads.push_back(params[i].grad().data());
      }
      opt.step(maps, grads, schedule.lr, schedule.weight_decay);
      ++step;
    }
  }

  ad::Tape tape;
  std::vector<Var> params;
  for (const auto& p : net.parameters()) params.push_back(tape.constant(p));
  const Batch all = full_batch(test);
  const std::vector<double> scores = positive_scores(net.forward(tape, params, all).value());
  MetricsReport report = classification_report(scores, test.labels);
  report.parameter_count = net.parameter_count();
  return report;
}

}  // namespace grmc::nas
