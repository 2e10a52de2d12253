#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <Eigen/Core>

#include "grmc/gumbel.hpp"

namespace grmc {

using Logits = CategoricalLogits<double>;
using Outcome = HardSample<double>;
using Perturbed = PerturbedLogits<double>;

/// Downstream loss f(D) of a one-hot outcome, with ∂f/∂D at that outcome.
class DownstreamObjective {
 public:
  virtual ~DownstreamObjective() = default;
  virtual Eigen::Index dimension() const = 0;
  virtual double value(const Eigen::VectorXd& d) const = 0;
  virtual Eigen::VectorXd gradient(const Eigen::VectorXd& d) const = 0;
  virtual std::string name() const = 0;
};

/// f(D) = c·D
class LinearObjective final : public DownstreamObjective {
 public:
  explicit LinearObjective(Eigen::VectorXd payoff) : payoff_(std::move(payoff)) {}

  Eigen::Index dimension() const override { return payoff_.size(); }
  double value(const Eigen::VectorXd& d) const override { return payoff_.dot(d); }
  Eigen::VectorXd gradient(const Eigen::VectorXd&) const override { return payoff_; }
  std::string name() const override { return "linear"; }

 private:
  Eigen::VectorXd payoff_;
};

/// f(D) = Dᵀ Q D + cᵀ D
class QuadraticObjective final : public DownstreamObjective {
 public:
  QuadraticObjective(Eigen::MatrixXd q, Eigen::VectorXd c) : q_(std::move(q)), c_(std::move(c)) {
    if (q_.rows() != q_.cols() || q_.rows() != c_.size()) {
      throw DomainError("QuadraticObjective: Q must be N×N and c length N");
    }
  }

  Eigen::Index dimension() const override { return c_.size(); }
  double value(const Eigen::VectorXd& d) const override { return d.dot(q_ * d) + c_.dot(d); }
  Eigen::VectorXd gradient(const Eigen::VectorXd& d) const override { return (q_ + q_.transpose()) * d + c_; }
  std::string name() const override { return "quadratic"; }

 private:
  Eigen::MatrixXd q_;
  Eigen::VectorXd c_;
};

enum class EstimatorKind { STGS, GRMC };

std::string to_string(EstimatorKind kind);
EstimatorKind estimator_kind_from_string(const std::string& s);

struct EstimatorConfig {
  EstimatorKind kind{EstimatorKind::GRMC};
  double lambda{1.0};
  int k_samples{1};

  void validate() const;
};

struct GradientEstimate {
  Eigen::VectorXd grad_theta;
  Outcome outcome;
};

/// vᵀJ for J = d softmax((θ+G)/λ)/dθ at fixed G:
///   (vᵀJ)_j = s_j (v_j - v·s) / λ,   s = softmax((θ+G)/λ).
Eigen::VectorXd softmax_jacobian_vector_product(const Eigen::VectorXd& v, const Perturbed& perturbed,
                                                double lambda);

/// Straight-through Gumbel-Softmax: hard forward at D, backward through the
/// tempered softmax Jacobian of the same perturbation.
GradientEstimate stgs_gradient(const DownstreamObjective& obj, const Logits& logits, double lambda, Rng& rng);

/// vᵀ (1/K) Σ_k J(θ + G^k) with G^k drawn from θ + G | D = index.
Eigen::VectorXd rao_blackwell_jacobian_product(const Eigen::VectorXd& v, const Logits& logits,
                                               Eigen::Index index, double lambda, int k_samples, Rng& rng);

/// Gumbel-Rao Monte Carlo with K conditional draws. The two-stream overload
/// draws D from `outcome_rng` and the conditional perturbations from
/// `conditional_rng`; sharing `outcome_rng` seeds with an STGS run gives
/// common random numbers.
GradientEstimate grmc_gradient(const DownstreamObjective& obj, const Logits& logits, const EstimatorConfig& config,
                               Rng& outcome_rng, Rng& conditional_rng);
GradientEstimate grmc_gradient(const DownstreamObjective& obj, const Logits& logits, const EstimatorConfig& config,
                               Rng& rng);

/// Dispatch on config.kind.
GradientEstimate estimate_gradient(const DownstreamObjective& obj, const Logits& logits,
                                   const EstimatorConfig& config, Rng& outcome_rng, Rng& conditional_rng);

inline constexpr Eigen::Index kMaxEnumerationCategories = 20;

/// d/dθ Σ_i softmax(θ)_i f(e_i) by enumeration; coordinate j is π_j (f(e_j) - E f).
Eigen::VectorXd exact_expectation_gradient(const DownstreamObjective& obj, const Logits& logits);

struct EstimatorStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;   // per coordinate, population (1/n)
  Eigen::VectorXd mean_se;    // per coordinate standard error of the mean
  Eigen::VectorXd exact;      // enumeration oracle
  double trace_variance{0};
  double trace_variance_se{0};
  double bias_sq{0};
  double mse{0};
  double mse_se{0};
  std::size_t trials{0};
  std::uint64_t seed{0};
  bool ci_reliable{false};
};

/// Minimum trial count for which normal-approximation intervals are reported as reliable.
inline constexpr std::size_t kReliableTrials = 30;

/// Runs the estimator `trials` times. Trial t draws its outcome from a
/// substream keyed by (seed, chunk) so STGS and GRMC runs with equal seeds see
/// the same D sequence. Results are independent of `threads`.
EstimatorStats estimator_stats(const DownstreamObjective& obj, const Logits& logits, const EstimatorConfig& config,
                               std::size_t trials, std::uint64_t seed, unsigned threads = 1);

/// Max |a_j - b_j| / sqrt(se_a_j² + se_b_j²).
double max_standardized_mean_gap(const EstimatorStats& a, const EstimatorStats& b);

}  // namespace grmc
