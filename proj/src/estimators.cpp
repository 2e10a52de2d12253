#include "grmc/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>
#include <vector>

namespace grmc {

std::string to_string(EstimatorKind kind) { return kind == EstimatorKind::STGS ? "STGS" : "GRMC"; }

EstimatorKind estimator_kind_from_string(const std::string& s) {
  if (s == "STGS" || s == "stgs") return EstimatorKind::STGS;
  if (s == "GRMC" || s == "grmc") return EstimatorKind::GRMC;
  throw DomainError("unknown estimator kind '" + s + "'");
}

void EstimatorConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("estimator temperature must be > 0");
  if (k_samples < 1) throw DomainError("estimator K must be >= 1");
}

Eigen::VectorXd softmax_jacobian_vector_product(const Eigen::VectorXd& v, const Perturbed& perturbed,
                                                double lambda) {
  if (v.size() != perturbed.values.size()) {
    throw DomainError("softmax_jacobian_vector_product: dimension mismatch");
  }
  const Eigen::VectorXd s = tempered_softmax(perturbed.values, lambda);
  // Shifting v by a constant leaves vᵀJ unchanged (rows of J sum to zero);
  // shifting by v_0 makes constant payoffs give exactly zero.
  const Eigen::VectorXd w = v.array() - v[0];
  return (s.array() * (w.array() - w.dot(s)) / lambda).matrix();
}

namespace {

void check_objective(const DownstreamObjective& obj, const Logits& logits) {
  if (obj.dimension() != logits.size()) throw DomainError("objective dimension differs from number of categories");
}

}  // namespace

GradientEstimate stgs_gradient(const DownstreamObjective& obj, const Logits& logits, double lambda, Rng& rng) {
  if (!(lambda > 0.0)) throw DomainError("stgs_gradient: temperature must be > 0");
  check_objective(obj, logits);
  const Perturbed perturbed = perturb_logits(logits, rng);
  GradientEstimate est;
  est.outcome = perturbed.outcome();
  est.grad_theta = softmax_jacobian_vector_product(obj.gradient(est.outcome.one_hot), perturbed, lambda);
  return est;
}

Eigen::VectorXd rao_blackwell_jacobian_product(const Eigen::VectorXd& v, const Logits& logits, Eigen::Index index,
                                               double lambda, int k_samples, Rng& rng) {
  if (k_samples < 1) throw DomainError("GRMC: K must be >= 1");
  if (!(lambda > 0.0)) throw DomainError("GRMC: temperature must be > 0");
  const Eigen::Index n = logits.size();
  if (v.size() != n) throw DomainError("GRMC: dimension mismatch");
  if (index < 0 || index >= n) throw DomainError("GRMC: outcome index out of range");

  // Hot loop: same arithmetic as conditional_gumbel_from_exponentials, without
  // per-draw allocation.
  const Eigen::VectorXd& theta = logits.theta();
  if (!std::isfinite(theta[index])) throw DomainError("GRMC: conditioned category has zero probability");
  const double log_z = logits.log_partition();
  const double inv_z = std::exp(-log_z);
  Eigen::VectorXd inv_weight(n);
  for (Eigen::Index j = 0; j < n; ++j) inv_weight[j] = std::exp(-theta[j]);

  const Eigen::VectorXd w = v.array() - v[0];
  Eigen::VectorXd u(n), s(n);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < k_samples; ++k) {
    for (Eigen::Index j = 0; j < n; ++j) u[j] = rng.exponential();
    const double e_top = u[index];
    const double top = -std::log(e_top) + log_z;
    const double tail = e_top * inv_z;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == index) continue;
      double val = -std::log(u[j] * inv_weight[j] + tail);
      if (!(val < top)) val = std::nextafter(top, -std::numeric_limits<double>::infinity());
      u[j] = val;
    }
    u[index] = top;
    // s = softmax(u / λ); the max is u[index].
    double total = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      s[j] = std::exp((u[j] - top) / lambda);
      total += s[j];
    }
    s /= total;
    const double ws = w.dot(s);
    acc.array() += s.array() * (w.array() - ws);
  }
  return acc / (lambda * static_cast<double>(k_samples));
}

GradientEstimate grmc_gradient(const DownstreamObjective& obj, const Logits& logits, const EstimatorConfig& config,
                               Rng& outcome_rng, Rng& conditional_rng) {
  if (config.kind != EstimatorKind::GRMC) throw DomainError("grmc_gradient: config kind must be GRMC");
  config.validate();
  check_objective(obj, logits);
  GradientEstimate est;
  est.outcome = gumbel_max_sample(logits, outcome_rng);
  est.grad_theta = rao_blackwell_jacobian_product(obj.gradient(est.outcome.one_hot), logits, est.outcome.index,
                                                  config.lambda, config.k_samples, conditional_rng);
  return est;
}

GradientEstimate grmc_gradient(const DownstreamObjective& obj, const Logits& logits, const EstimatorConfig& config,
                               Rng& rng) {
  return grmc_gradient(obj, logits, config, rng, rng);
}

GradientEstimate estimate_gradient(const DownstreamObjective& obj, const Logits& logits,
                                   const EstimatorConfig& config, Rng& outcome_rng, Rng& conditional_rng) {
  if (config.kind == EstimatorKind::STGS) return stgs_gradient(obj, logits, config.lambda, outcome_rng);
  return grmc_gradient(obj, logits, config, outcome_rng, conditional_rng);
}

Eigen::VectorXd exact_expectation_gradient(const DownstreamObjective& obj, const Logits& logits) {
  const Eigen::Index n = logits.size();
  if (n > kMaxEnumerationCategories) {
    throw CapacityError("exact_expectation_gradient: N = " + std::to_string(n) + " exceeds enumeration bound " +
                        std::to_string(kMaxEnumerationCategories));
  }
  check_objective(obj, logits);
  const Eigen::VectorXd pi = logits.probabilities();
  Eigen::VectorXd f(n);
  for (Eigen::Index i = 0; i < n; ++i) f[i] = obj.value(Outcome::at(i, n).one_hot);
  const double expected = pi.dot(f);
  return (pi.array() * (f.array() - expected)).matrix();
}

namespace {

constexpr std::size_t kTrialChunk = 1024;

}  // namespace

EstimatorStats estimator_stats(const DownstreamObjective& obj, const Logits& logits, const EstimatorConfig& config,
                               std::size_t trials, std::uint64_t seed, unsigned threads) {
  config.validate();
  check_objective(obj, logits);
  if (trials < 2) throw DomainError("estimator_stats: need at least 2 trials");

  const Eigen::Index n = logits.size();
  Eigen::MatrixXd samples(n, static_cast<Eigen::Index>(trials));
  const std::size_t chunks = (trials + kTrialChunk - 1) / kTrialChunk;

  auto run_chunk = [&](std::size_t c) {
    Rng outcome_rng(seed, {c, 0});
    Rng conditional_rng(seed, {c, 1});
    const std::size_t end = std::min(trials, (c + 1) * kTrialChunk);
    for (std::size_t t = c * kTrialChunk; t < end; ++t) {
      samples.col(static_cast<Eigen::Index>(t)) =
          estimate_gradient(obj, logits, config, outcome_rng, conditional_rng).grad_theta;
    }
  };

  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(chunks)));
  if (threads == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < chunks; c += threads) run_chunk(c);
      });
    }
    for (auto& th : pool) th.join();
  }

  EstimatorStats st;
  st.trials = trials;
  st.seed = seed;
  st.ci_reliable = trials >= kReliableTrials;
  st.exact = exact_expectation_gradient(obj, logits);

  const double nt = static_cast<double>(trials);
  st.mean = samples.rowwise().mean();
  const Eigen::MatrixXd centered = samples.colwise() - st.mean;
  st.variance = centered.array().square().rowwise().mean().matrix();
  st.mean_se = (st.variance.array() / (nt - 1.0)).sqrt().matrix();

  const Eigen::RowVectorXd spread = centered.array().square().colwise().sum();
  st.trace_variance = spread.mean();
  st.trace_variance_se = std::sqrt((spread.array() - st.trace_variance).square().sum() / (nt - 1.0) / nt);

  const Eigen::RowVectorXd err = (samples.colwise() - st.exact).array().square().colwise().sum();
  st.mse = err.mean();
  st.mse_se = std::sqrt((err.array() - st.mse).square().sum() / (nt - 1.0) / nt);
  st.bias_sq = (st.mean - st.exact).squaredNorm();
  return st;
}

double max_standardized_mean_gap(const EstimatorStats& a, const EstimatorStats& b) {
  if (a.mean.size() != b.mean.size()) throw DomainError("max_standardized_mean_gap: dimension mismatch");
  double worst = 0.0;
  for (Eigen::Index j = 0; j < a.mean.size(); ++j) {
    const double se = std::sqrt(a.mean_se[j] * a.mean_se[j] + b.mean_se[j] * b.mean_se[j]);
    const double gap = std::abs(a.mean[j] - b.mean[j]);
    if (se > 0.0) {
      worst = std::max(worst, gap / se);
    } else if (gap > 0.0) {
      worst = std::numeric_limits<double>::infinity();
    }
  }
  return worst;
}

}  // namespace grmc
