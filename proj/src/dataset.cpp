#include "grmc/dataset.hpp"

#include <algorithm>
#include <unordered_set>

#include <fmt/format.h>

namespace grmc {

void Dataset::validate() const {
  if (features.empty()) throw ShapeError("dataset has no feature streams");
  if (static_cast<int>(features.size()) != n_image + n_speech) {
    throw ShapeError(fmt::format("dataset declares {}+{} streams but holds {}", n_image, n_speech, features.size()));
  }
  if (ids.size() != labels.size()) throw ShapeError("dataset ids and labels differ in length");
  for (const auto& f : features) {
    if (f.rank() != 3 || f.shape() != features[0].shape()) {
      throw ShapeError(fmt::format("feature streams must share one n×C×L shape, got {} and {}",
                                   ad::to_string(f.shape()), ad::to_string(features[0].shape())));
    }
  }
  if (features[0].dim(0) != static_cast<ad::Index>(labels.size())) {
    throw ShapeError(fmt::format("{} labels for {} samples", labels.size(), features[0].dim(0)));
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw DomainError("labels must be 0 or 1");
  }
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> rows) {
  Batch b;
  const ad::Index c = data.channels(), l = data.length();
  const ad::Index block = c * l;
  const auto n = static_cast<ad::Index>(rows.size());
  for (const auto& f : data.features) {
    ad::Tensor t({n, c, l});
    for (ad::Index i = 0; i < n; ++i) {
      t.data().segment(i * block, block) = f.data().segment(static_cast<ad::Index>(rows[static_cast<std::size_t>(i)]) * block, block);
    }
    b.features.push_back(std::move(t));
  }
  for (auto r : rows) {
    b.labels.push_back(data.labels.at(r));
    b.ids.push_back(data.ids.at(r));
  }
  return b;
}

Batch full_batch(const Dataset& data) {
  std::vector<std::size_t> rows(data.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return make_batch(data, rows);
}

void require_disjoint(const Batch& a, const Batch& b) {
  std::unordered_set<std::size_t> seen(a.ids.begin(), a.ids.end());
  for (auto id : b.ids) {
    if (seen.count(id)) throw DomainError(fmt::format("training and validation batches share sample {}", id));
  }
}

}  // namespace grmc
