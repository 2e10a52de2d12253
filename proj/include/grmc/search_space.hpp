#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "grmc/fusion_ops.hpp"

namespace grmc::nas {

struct SearchSpaceConfig {
  int n_image_features{2};
  int n_speech_features{2};
  int n_cells{2};
  int nodes_per_cell{2};
  double lambda{0.1};
  int k_samples{100};
  ad::Index channels{4};
  ad::Index length{8};

  void validate() const;
  bool operator==(const SearchSpaceConfig&) const = default;
};

/// First-level edge between node indices of the ordered set
/// {I1..I_NA, S1..S_NB, Cell1..Cell_N}.
struct Edge {
  int src;
  int dst;
};

/// Where an intermediate node's input slot reads from.
enum class SlotSource { CellInput = 0, PreviousNode = 1 };

std::string to_string(SlotSource s);
SlotSource slot_source_from_string(const std::string& s);

/// Topology and parameter-row bookkeeping. Every cell receives one edge from
/// each earlier first-level node; intermediate node m of a cell has two input
/// slots choosing between the cell input node and node m-1 (node 0 being the
/// cell input itself).
class SearchSpace {
 public:
  explicit SearchSpace(SearchSpaceConfig config);

  const SearchSpaceConfig& config() const { return config_; }
  int num_features() const { return config_.n_image_features + config_.n_speech_features; }
  int num_nodes() const { return num_features() + config_.n_cells; }
  int cell_node(int cell) const { return num_features() + cell; }

  const std::vector<Edge>& edges() const { return edges_; }
  /// Edge indices entering `cell`, ordered by source.
  const std::vector<int>& edges_into(int cell) const { return incoming_.at(static_cast<std::size_t>(cell)); }

  int num_cell_nodes() const { return config_.n_cells * config_.nodes_per_cell; }
  int node_row(int cell, int node) const { return cell * config_.nodes_per_cell + node; }
  int num_slots() const { return 2 * num_cell_nodes(); }
  int slot_row(int cell, int node, int slot) const { return 2 * node_row(cell, node) + slot; }

  std::string node_name(int index) const;
  int node_index(const std::string& name) const;

  static std::string weight_name(int cell, int node, Primitive op, int slot);

 private:
  SearchSpaceConfig config_;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> incoming_;
};

/// Every learnable quantity of the search: first-level logits α (edges × 2),
/// second-level operation logits γ (cell nodes × 5), slot logits β (slots × 2)
/// and all operation/head weights ω.
struct SearchState {
  Eigen::MatrixXd alpha;
  Eigen::MatrixXd gamma;
  Eigen::MatrixXd beta;
  std::vector<std::pair<std::string, Tensor>> omega;

  /// Architecture logits start at N(0, 1e-3²); ω from the fan-in uniform scheme.
  static SearchState initialize(const SearchSpace& space, Rng& rng);

  const Tensor& weight(const std::string& name) const;
  Tensor& weight(const std::string& name);

  bool operator==(const SearchState& other) const;
};

/// Σ over rows of the Shannon entropy (natural log) of softmax(row).
double entropy(const Eigen::MatrixXd& logits);

}  // namespace grmc::nas
