#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "grmc/dataset.hpp"

namespace grmc {

/// Two-class bimodal toy task. Each modality carries a scalar class signal
/// a_m = (y - 1/2)·separation·σ + σ(√ρ·z_shared + √(1-ρ)·z_m), written along a
/// fixed per-stage direction of the C × L feature map, plus isotropic noise.
/// With ρ < 1 each modality holds evidence the other lacks.
struct SynthTaskConfig {
  std::size_t n_train{512};
  std::size_t n_val{512};
  std::size_t n_test{2000};
  int n_image_features{2};
  int n_speech_features{2};
  Eigen::Index channels{4};
  Eigen::Index length{8};
  double separation{4.0};   // class-mean gap in units of σ
  double sigma{1.0};        // covariance scale
  double correlation{0.5};  // ρ ∈ [0, 1]
  double noise{0.5};        // per-stage isotropic noise
  bool shuffle_labels{false};
  std::uint64_t seed{1};

  void validate() const;
  bool operator==(const SynthTaskConfig&) const = default;
};

struct SynthSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Deterministic in the config. Ids are unique across the three splits and
/// each split is exactly balanced (odd sizes get the extra sample in class 0).
/// With shuffle_labels the labels of every split are permuted after the
/// features are drawn, leaving no signal.
SynthSplits generate_synthetic(const SynthTaskConfig& cfg);

/// L2-regularised logistic regression on the flattened streams `nodes`.
struct LinearProbe {
  std::vector<int> nodes;
  Eigen::VectorXd weights;  // last entry is the bias
  std::vector<double> scores(const Dataset& data) const;
};

LinearProbe fit_linear_probe(const Dataset& train, std::vector<int> nodes, double ridge = 1e-2);

/// Per-node feature files (GRNT/GRND binary N×C×L, or CSV N×(C·L)) plus a
/// labels CSV with header "sample_id,label". Rows are matched by position.
Dataset load_dataset(const std::vector<std::filesystem::path>& feature_files, const std::filesystem::path& labels_csv,
                     int n_image, int n_speech, Eigen::Index channels, Eigen::Index length);

/// Writes the streams as "<prefix>_node<i>.grnt" and "<prefix>_labels.csv".
void save_dataset(const Dataset& data, const std::filesystem::path& dir, const std::string& prefix);

}  // namespace grmc
