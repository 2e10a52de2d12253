#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grmc/search_space.hpp"

namespace grmc::nas {

/// Discrete architecture extracted from a SearchState.
struct Genotype {
  struct EdgeChoice {
    int src;
    int dst;
    bool kept;
    bool operator==(const EdgeChoice&) const = default;
  };
  struct NodeChoice {
    int cell;
    int node;
    Primitive op;
    std::array<SlotSource, 2> inputs;
    bool tie;  // γ argmax was an exact tie (lowest index taken)
    bool operator==(const NodeChoice&) const = default;
  };
  struct Provenance {
    double lambda{0};
    int k_samples{0};
    std::uint64_t seed{0};
    int epoch{0};
    bool operator==(const Provenance&) const = default;
  };

  static constexpr int kVersion = 1;

  SearchSpaceConfig topology;
  std::vector<EdgeChoice> first_level_edges;
  std::vector<NodeChoice> cells;
  Provenance provenance;
  std::string entropy_history_ref;

  /// Learnable parameters of the discrete network: chosen ops' weights plus the head.
  ad::Index parameter_count() const;

  bool operator==(const Genotype&) const = default;
};

/// Keeps edge (a,b) iff softmax(α)_Identity > softmax(α)_Zero; each node takes
/// argmax softmax(γ) and argmax softmax(β) per slot, ties to the lowest index.
/// Throws DegenerateGenotypeError if some cell keeps no input edge. The
/// provenance takes λ and K from the space.
Genotype derive_architecture(const SearchSpace& space, const SearchState& state, std::uint64_t seed = 0,
                             int epoch = 0);

/// Head parameter count for `channels` channels and two classes.
ad::Index head_parameter_count(ad::Index channels);

nlohmann::json to_json(const Genotype& g);
Genotype genotype_from_json(const nlohmann::json& j);

/// Stable textual form (2-space indented JSON + newline).
std::string serialize(const Genotype& g);
Genotype parse_genotype(const std::string& text);

}  // namespace grmc::nas
