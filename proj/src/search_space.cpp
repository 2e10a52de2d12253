#include "grmc/search_space.hpp"

#include <cmath>

#include <fmt/format.h>

namespace grmc::nas {

void SearchSpaceConfig::validate() const {
  if (n_image_features < 1 || n_speech_features < 1 || n_cells < 1 || nodes_per_cell < 1) {
    throw ConfigError("search space counts must all be >= 1");
  }
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("search temperature lambda must be > 0");
  if (k_samples < 1) throw ConfigError("search k_samples must be >= 1");
  if (channels < 1 || length < 1) throw ConfigError("feature dims must be >= 1");
}

std::string to_string(SlotSource s) { return s == SlotSource::CellInput ? "input" : "previous"; }

SlotSource slot_source_from_string(const std::string& s) {
  if (s == "input") return SlotSource::CellInput;
  if (s == "previous") return SlotSource::PreviousNode;
  throw DomainError("unknown slot source '" + s + "'");
}

SearchSpace::SearchSpace(SearchSpaceConfig config) : config_(config) {
  config_.validate();
  incoming_.resize(static_cast<std::size_t>(config_.n_cells));
  for (int c = 0; c < config_.n_cells; ++c) {
    const int dst = cell_node(c);
    for (int src = 0; src < dst; ++src) {
      incoming_[static_cast<std::size_t>(c)].push_back(static_cast<int>(edges_.size()));
      edges_.push_back({src, dst});
    }
  }
}

std::string SearchSpace::node_name(int index) const {
  if (index < 0 || index >= num_nodes()) throw DomainError(fmt::format("node index {} out of range", index));
  if (index < config_.n_image_features) return fmt::format("I{}", index + 1);
  if (index < num_features()) return fmt::format("S{}", index - config_.n_image_features + 1);
  return fmt::format("Cell{}", index - num_features() + 1);
}

int SearchSpace::node_index(const std::string& name) const {
  for (int i = 0; i < num_nodes(); ++i) {
    if (node_name(i) == name) return i;
  }
  throw DomainError("unknown first-level node '" + name + "'");
}

std::string SearchSpace::weight_name(int cell, int node, Primitive op, int slot) {
  return fmt::format("cell{}.node{}.{}.{}", cell + 1, node + 1, to_string(op), slot);
}

SearchState SearchState::initialize(const SearchSpace& space, Rng& rng) {
  SearchState s;
  auto small = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 1e-3 * rng.normal();
    return m;
  };
  s.alpha = small(static_cast<Eigen::Index>(space.edges().size()), kFirstLevelOps.size());
  s.gamma = small(space.num_cell_nodes(), kSecondLevelOps.size());
  s.beta = small(space.num_slots(), 2);

  const auto& cfg = space.config();
  for (int c = 0; c < cfg.n_cells; ++c) {
    for (int m = 0; m < cfg.nodes_per_cell; ++m) {
      for (auto op : kSecondLevelOps) {
        OpInstance inst = instantiate(op, cfg.channels, rng);
        for (std::size_t w = 0; w < inst.weights.size(); ++w) {
          s.omega.emplace_back(SearchSpace::weight_name(c, m, op, static_cast<int>(w)), std::move(inst.weights[w]));
        }
      }
    }
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
  Tensor hw({cfg.channels, 2}), hb({2});
  for (ad::Index i = 0; i < hw.size(); ++i) hw[i] = (2.0 * rng.uniform() - 1.0) * bound;
  for (ad::Index i = 0; i < hb.size(); ++i) hb[i] = (2.0 * rng.uniform() - 1.0) * bound;
  s.omega.emplace_back("head.w", std::move(hw));
  s.omega.emplace_back("head.b", std::move(hb));
  return s;
}

const Tensor& SearchState::weight(const std::string& name) const {
  for (const auto& [n, t] : omega) {
    if (n == name) return t;
  }
  throw DomainError("no weight named '" + name + "'");
}

Tensor& SearchState::weight(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).weight(name));
}

bool SearchState::operator==(const SearchState& other) const {
  if (alpha != other.alpha || gamma != other.gamma || beta != other.beta) return false;
  if (omega.size() != other.omega.size()) return false;
  for (std::size_t i = 0; i < omega.size(); ++i) {
    if (omega[i].first != other.omega[i].first || !(omega[i].second == other.omega[i].second)) return false;
  }
  return true;
}

double entropy(const Eigen::MatrixXd& logits) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Eigen::ArrayXd x = logits.row(r).transpose().array() - logits.row(r).maxCoeff();
    const double log_z = std::log(x.exp().sum());
    const Eigen::ArrayXd log_p = x - log_z;
    // H = -Σ p log p, with 0·log 0 = 0
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double p = std::exp(log_p[i]);
      if (p > 0.0) total -= p * log_p[i];
    }
  }
  return total;
}

}  // namespace grmc::nas
