#include "grmc/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include <fmt/format.h>

#include "grmc/errors.hpp"

namespace grmc {

double compute_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError(fmt::format("compute_auc: {} scores vs {} labels", scores.size(), labels.size()));
  }
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DomainError(fmt::format("compute_auc: label {} is not binary", y));
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw DomainError("compute_auc: both classes must be present");

  // Mid-ranks; the positive rank sum gives the Mann-Whitney U.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum += mid;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

MetricsReport classification_report(std::span<const double> scores, std::span<const int> labels, double threshold) {
  MetricsReport r;
  r.auc = compute_auc(scores, labels);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] > threshold;
    if (labels[i] == 1) {
      (predicted ? r.true_positive : r.false_negative)++;
    } else {
      (predicted ? r.false_positive : r.true_negative)++;
    }
  }
  r.acc = static_cast<double>(r.true_positive + r.true_negative) / static_cast<double>(scores.size());
  return r;
}

nlohmann::json to_json(const MetricsReport& m) {
  return {{"auc", m.auc},
          {"acc", m.acc},
          {"parameter_count", m.parameter_count},
          {"confusion", {{"tp", m.true_positive}, {"tn", m.true_negative}, {"fp", m.false_positive}, {"fn", m.false_negative}}}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  try {
    MetricsReport m;
    m.auc = j.at("auc").get<double>();
    m.acc = j.at("acc").get<double>();
    m.parameter_count = j.at("parameter_count").get<std::int64_t>();
    const auto& c = j.at("confusion");
    m.true_positive = c.at("tp").get<std::int64_t>();
    m.true_negative = c.at("tn").get<std::int64_t>();
    m.false_positive = c.at("fp").get<std::int64_t>();
    m.false_negative = c.at("fn").get<std::int64_t>();
    const auto total = m.true_positive + m.true_negative + m.false_positive + m.false_negative;
    if (total <= 0 || m.acc != static_cast<double>(m.true_positive + m.true_negative) / static_cast<double>(total)) {
      throw FormatError("metrics: accuracy disagrees with the confusion counts");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics: ") + e.what());
  }
}

}  // namespace grmc
