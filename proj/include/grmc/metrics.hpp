#pragma once

#include <cstdint>
#include <span>

#include <nlohmann/json.hpp>

namespace grmc {

/// Rank-based (Mann–Whitney) AUC; tied scores contribute 1/2.
/// Throws DomainError unless both classes are present.
double compute_auc(std::span<const double> scores, std::span<const int> labels);

struct MetricsReport {
  double auc{0};
  double acc{0};
  std::int64_t parameter_count{0};
  std::int64_t true_positive{0};
  std::int64_t true_negative{0};
  std::int64_t false_positive{0};
  std::int64_t false_negative{0};

  bool operator==(const MetricsReport&) const = default;
};

/// AUC from `scores`, accuracy/confusion from score > threshold.
MetricsReport classification_report(std::span<const double> scores, std::span<const int> labels,
                                     double threshold = 0.5);

nlohmann::json to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const nlohmann::json& j);

}  // namespace grmc
