#include "grmc/genotype.hpp"

#include <fmt/format.h>

#include "grmc/gumbel.hpp"

namespace grmc::nas {

ad::Index Genotype::parameter_count() const {
  ad::Index n = head_parameter_count(topology.channels);
  for (const auto& c : cells) n += describe(c.op, topology.channels).parameter_count();
  return n;
}

ad::Index head_parameter_count(ad::Index channels) { return 2 * channels + 2; }

namespace {

// Lowest index among the maxima of softmax(row); `tie` reports a shared maximum.
int row_argmax(const Eigen::MatrixXd& m, Eigen::Index r, bool* tie = nullptr) {
  const Eigen::VectorXd p = tempered_softmax(Eigen::VectorXd(m.row(r).transpose()), 1.0);
  const int best = static_cast<int>(argmax_lowest(p));
  if (tie) {
    *tie = false;
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      if (j != best && p[j] == p[best]) *tie = true;
    }
  }
  return best;
}

}  // namespace

Genotype derive_architecture(const SearchSpace& space, const SearchState& state, std::uint64_t seed, int epoch) {
  const auto& cfg = space.config();
  if (state.alpha.rows() != static_cast<Eigen::Index>(space.edges().size()) ||
      state.gamma.rows() != space.num_cell_nodes() || state.beta.rows() != space.num_slots()) {
    throw ShapeError("derive_architecture: state does not match the search space");
  }
  Genotype g;
  g.topology = cfg;
  g.provenance = {cfg.lambda, cfg.k_samples, seed, epoch};

  for (std::size_t e = 0; e < space.edges().size(); ++e) {
    const Eigen::VectorXd p =
        tempered_softmax(Eigen::VectorXd(state.alpha.row(static_cast<Eigen::Index>(e)).transpose()), 1.0);
    g.first_level_edges.push_back({space.edges()[e].src, space.edges()[e].dst, p[0] > p[1]});
  }
  for (int c = 0; c < cfg.n_cells; ++c) {
    bool any = false;
    for (int e : space.edges_into(c)) any = any || g.first_level_edges[static_cast<std::size_t>(e)].kept;
    if (!any) throw DegenerateGenotypeError(fmt::format("Cell{} keeps no input edge", c + 1));
  }
  for (int c = 0; c < cfg.n_cells; ++c) {
    for (int m = 0; m < cfg.nodes_per_cell; ++m) {
      Genotype::NodeChoice n{};
      n.cell = c;
      n.node = m;
      n.op = kSecondLevelOps[static_cast<std::size_t>(row_argmax(state.gamma, space.node_row(c, m), &n.tie))];
      for (int s = 0; s < 2; ++s) {
        n.inputs[static_cast<std::size_t>(s)] = static_cast<SlotSource>(row_argmax(state.beta, space.slot_row(c, m, s)));
      }
      g.cells.push_back(n);
    }
  }
  return g;
}

nlohmann::json to_json(const Genotype& g) {
  using nlohmann::json;
  const SearchSpace space(g.topology);
  json j;
  j["version"] = Genotype::kVersion;
  j["lambda"] = g.provenance.lambda;
  j["K"] = g.provenance.k_samples;
  j["seed"] = g.provenance.seed;
  j["epoch"] = g.provenance.epoch;
  j["topology"] = {{"n_image_features", g.topology.n_image_features},
                   {"n_speech_features", g.topology.n_speech_features},
                   {"n_cells", g.topology.n_cells},
                   {"nodes_per_cell", g.topology.nodes_per_cell},
                   {"channels", g.topology.channels},
                   {"length", g.topology.length}};
  j["first_level_edges"] = json::array();
  for (const auto& e : g.first_level_edges) {
    j["first_level_edges"].push_back({{"src", space.node_name(e.src)}, {"dst", space.node_name(e.dst)}, {"kept", e.kept}});
  }
  j["cells"] = json::array();
  for (const auto& n : g.cells) {
    j["cells"].push_back({{"cell", n.cell + 1},
                          {"node", n.node + 1},
                          {"op", to_string(n.op)},
                          {"inputs", {to_string(n.inputs[0]), to_string(n.inputs[1])}},
                          {"tie", n.tie}});
  }
  j["entropy_history_ref"] = g.entropy_history_ref;
  return j;
}

Genotype genotype_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != Genotype::kVersion) {
      throw FormatError(fmt::format("genotype: unsupported version {}", j.at("version").dump()));
    }
    Genotype g;
    const auto& t = j.at("topology");
    g.topology.n_image_features = t.at("n_image_features").get<int>();
    g.topology.n_speech_features = t.at("n_speech_features").get<int>();
    g.topology.n_cells = t.at("n_cells").get<int>();
    g.topology.nodes_per_cell = t.at("nodes_per_cell").get<int>();
    g.topology.channels = t.at("channels").get<ad::Index>();
    g.topology.length = t.at("length").get<ad::Index>();
    g.provenance.lambda = j.at("lambda").get<double>();
    g.provenance.k_samples = j.at("K").get<int>();
    g.provenance.seed = j.at("seed").get<std::uint64_t>();
    g.provenance.epoch = j.at("epoch").get<int>();
    g.topology.lambda = g.provenance.lambda;
    g.topology.k_samples = g.provenance.k_samples;
    g.topology.validate();
    const SearchSpace space(g.topology);

    const auto& edges = j.at("first_level_edges");
    if (edges.size() != space.edges().size()) throw FormatError("genotype: wrong number of first-level edges");
    for (std::size_t e = 0; e < edges.size(); ++e) {
      Genotype::EdgeChoice c{space.node_index(edges[e].at("src").get<std::string>()),
                             space.node_index(edges[e].at("dst").get<std::string>()), edges[e].at("kept").get<bool>()};
      if (c.src != space.edges()[e].src || c.dst != space.edges()[e].dst) {
        throw FormatError(fmt::format("genotype: edge {} out of order", e));
      }
      g.first_level_edges.push_back(c);
    }
    const auto& cells = j.at("cells");
    if (static_cast<int>(cells.size()) != space.num_cell_nodes()) throw FormatError("genotype: wrong number of cell nodes");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& c = cells[i];
      Genotype::NodeChoice n{};
      n.cell = c.at("cell").get<int>() - 1;
      n.node = c.at("node").get<int>() - 1;
      if (space.node_row(n.cell, n.node) != static_cast<int>(i) || n.node < 0 || n.node >= g.topology.nodes_per_cell) {
        throw FormatError(fmt::format("genotype: cell node {} out of order", i));
      }
      n.op = second_level_from_string(c.at("op").get<std::string>());
      const auto& in = c.at("inputs");
      if (in.size() != 2) throw FormatError("genotype: every node has two inputs");
      n.inputs = {slot_source_from_string(in[0].get<std::string>()), slot_source_from_string(in[1].get<std::string>())};
      n.tie = c.value("tie", false);
      g.cells.push_back(n);
    }
    for (int c = 0; c < g.topology.n_cells; ++c) {
      bool any = false;
      for (int e : space.edges_into(c)) any = any || g.first_level_edges[static_cast<std::size_t>(e)].kept;
      if (!any) throw DegenerateGenotypeError(fmt::format("Cell{} keeps no input edge", c + 1));
    }
    g.entropy_history_ref = j.at("entropy_history_ref").get<std::string>();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("genotype: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("genotype: ") + e.what());
  } catch (const DomainError& e) {
    throw FormatError(std::string("genotype: ") + e.what());
  }
}

std::string serialize(const Genotype& g) { return to_json(g).dump(2) + "\n"; }

Genotype parse_genotype(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("genotype: ") + e.what());
  }
  return genotype_from_json(j);
}

}  // namespace grmc::nas
