#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "grmc/tensor.hpp"

namespace grmc {

/// Labelled bimodal samples. `features[f]` is the n × C × L stream of first-level
/// feature node f: image stages first, then speech stages.
struct Dataset {
  std::vector<ad::Tensor> features;
  std::vector<int> labels;
  std::vector<std::size_t> ids;
  int n_image{0};
  int n_speech{0};

  std::size_t size() const { return labels.size(); }
  ad::Index channels() const { return features.at(0).dim(1); }
  ad::Index length() const { return features.at(0).dim(2); }

  /// Throws ShapeError/DomainError on inconsistent streams or labels.
  void validate() const;
};

/// Rows `rows` of a dataset, one B × C × L tensor per feature node.
struct Batch {
  std::vector<ad::Tensor> features;
  std::vector<int> labels;
  std::vector<std::size_t> ids;

  std::size_t size() const { return labels.size(); }
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> rows);
Batch full_batch(const Dataset& data);

/// Throws DomainError if the two batches share a sample id.
void require_disjoint(const Batch& a, const Batch& b);

}  // namespace grmc
