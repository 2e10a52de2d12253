#pragma once

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

#include "grmc/errors.hpp"
#include "grmc/random.hpp"

namespace grmc {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Location/scale of a Gumbel (type I extreme value) distribution.
template <typename Scalar = double>
struct GumbelParams {
  Scalar mu{0};
  Scalar beta{1};

  void validate() const {
    if (!(beta > Scalar(0)) || !std::isfinite(static_cast<double>(beta)) ||
        !std::isfinite(static_cast<double>(mu))) {
      throw DomainError("Gumbel scale must be positive and finite, location finite");
    }
  }
};

template <typename Scalar>
Scalar gumbel_pdf(Scalar x, const GumbelParams<Scalar>& p = {}) {
  p.validate();
  const Scalar z = (x - p.mu) / p.beta;
  return std::exp(-z - std::exp(-z)) / p.beta;
}

template <typename Scalar>
Scalar gumbel_cdf(Scalar x, const GumbelParams<Scalar>& p = {}) {
  p.validate();
  return std::exp(-std::exp(-(x - p.mu) / p.beta));
}

/// Quantile function -β·log(-log u) + μ. Requires u strictly inside (0, 1);
/// samplers clamp their uniforms to [ε, 1-ε] before calling this.
template <typename Scalar>
Scalar gumbel_icdf(Scalar u, const GumbelParams<Scalar>& p = {}) {
  p.validate();
  if (!(u > Scalar(0) && u < Scalar(1))) {
    throw DomainError("gumbel_icdf: u must lie in (0, 1), got " + std::to_string(static_cast<double>(u)));
  }
  return -p.beta * std::log(-std::log(u)) + p.mu;
}

/// n i.i.d. Gumbel(μ, β) variates by inverse transform of clamped uniforms.
template <typename Scalar = double>
Vector<Scalar> sample_gumbel(Eigen::Index n, const GumbelParams<Scalar>& p, Rng& rng) {
  p.validate();
  if (n < 1) throw DomainError("sample_gumbel: n must be >= 1");
  Vector<Scalar> out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g = -std::log(-std::log(rng.clamped_uniform()));
    out[i] = p.mu + p.beta * static_cast<Scalar>(g);
  }
  return out;
}

/// Index of the maximum entry; ties go to the lowest index.
template <typename Derived>
Eigen::Index argmax_lowest(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// softmax(v / temperature) with max subtraction. Entries equal to -inf map to 0.
template <typename Derived>
Vector<typename Derived::Scalar> tempered_softmax(const Eigen::MatrixBase<Derived>& v,
                                                  typename Derived::Scalar temperature = 1) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = v.maxCoeff();
  Vector<Scalar> e = ((v.array() - top) / temperature).exp().matrix();
  // Eigen's vectorised exp clamps its argument, so -inf would leave a denormal.
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    if (v[i] == -std::numeric_limits<Scalar>::infinity()) e[i] = Scalar(0);
  }
  return e / e.sum();
}

/// Unnormalised log-probabilities θ over N ≥ 2 categories. -inf marks a
/// zero-probability category; at least one entry must be finite.
template <typename Scalar = double>
class CategoricalLogits {
 public:
  using VectorType = Vector<Scalar>;

  explicit CategoricalLogits(VectorType theta) : theta_(std::move(theta)) {
    if (theta_.size() < 2) throw DomainError("CategoricalLogits: need N >= 2 categories");
    bool any_finite = false;
    for (Eigen::Index i = 0; i < theta_.size(); ++i) {
      const double t = static_cast<double>(theta_[i]);
      if (std::isnan(t) || t == std::numeric_limits<double>::infinity()) {
        throw DomainError("CategoricalLogits: entries must be finite or -inf");
      }
      any_finite = any_finite || std::isfinite(t);
    }
    if (!any_finite) throw DomainError("CategoricalLogits: all entries are -inf");
  }

  const VectorType& theta() const { return theta_; }
  Eigen::Index size() const { return theta_.size(); }

  /// log Z(θ) = log Σ_j exp θ_j.
  Scalar log_partition() const {
    const Scalar top = theta_.maxCoeff();
    return top + std::log((theta_.array() - top).exp().sum());
  }

  VectorType probabilities() const { return tempered_softmax(theta_, Scalar(1)); }

 private:
  VectorType theta_;
};

/// One-hot categorical outcome D.
template <typename Scalar = double>
struct HardSample {
  Eigen::Index index{0};
  Vector<Scalar> one_hot;

  static HardSample at(Eigen::Index index, Eigen::Index n) {
    HardSample h;
    h.index = index;
    h.one_hot = Vector<Scalar>::Zero(n);
    h.one_hot[index] = Scalar(1);
    return h;
  }
};

/// θ + G together with its (lowest-index tie-broken) argmax.
template <typename Scalar = double>
struct PerturbedLogits {
  Vector<Scalar> values;
  Eigen::Index argmax_index{0};

  static PerturbedLogits from(Vector<Scalar> v) {
    PerturbedLogits p;
    p.argmax_index = argmax_lowest(v);
    p.values = std::move(v);
    return p;
  }

  HardSample<Scalar> outcome() const { return HardSample<Scalar>::at(argmax_index, values.size()); }
};

/// Relaxed sample on the simplex.
template <typename Scalar = double>
struct SoftSample {
  Vector<Scalar> probs;
  Scalar temperature{1};
};

/// θ + G with G i.i.d. standard Gumbel.
template <typename Scalar>
PerturbedLogits<Scalar> perturb_logits(const CategoricalLogits<Scalar>& logits, Rng& rng) {
  Vector<Scalar> v = logits.theta();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] += static_cast<Scalar>(-std::log(-std::log(rng.clamped_uniform())));
  }
  return PerturbedLogits<Scalar>::from(std::move(v));
}

/// Gumbel-max: onehot(argmax θ + G) ~ Cat(softmax θ).
template <typename Scalar>
HardSample<Scalar> gumbel_max_sample(const CategoricalLogits<Scalar>& logits, Rng& rng) {
  return perturb_logits(logits, rng).outcome();
}

/// Tempered softmax of an already perturbed logit vector. With the noise set
/// to zero this is the deterministic hook used by tests.
template <typename Scalar>
SoftSample<Scalar> relax(const PerturbedLogits<Scalar>& perturbed, Scalar lambda) {
  if (!(lambda > Scalar(0))) throw DomainError("relax: temperature must be > 0");
  return {tempered_softmax(perturbed.values, lambda), lambda};
}

template <typename Scalar>
SoftSample<Scalar> gumbel_softmax_sample(const CategoricalLogits<Scalar>& logits, Scalar lambda, Rng& rng) {
  if (!(lambda > Scalar(0))) throw DomainError("gumbel_softmax_sample: temperature must be > 0");
  return relax(perturb_logits(logits, rng), lambda);
}

/// Posterior draw of θ + G given argmax(θ + G) = index, built from explicit
/// Exponential(1) variates:
///   value_i = -log E_i + log Z(θ)
///   value_j = -log(E_j / exp θ_j + E_i / Z(θ))   (j ≠ i)
/// The returned argmax is always `index`.
template <typename Scalar, typename Derived>
PerturbedLogits<Scalar> conditional_gumbel_from_exponentials(const CategoricalLogits<Scalar>& logits,
                                                             Eigen::Index index,
                                                             const Eigen::MatrixBase<Derived>& exponentials) {
  const auto& theta = logits.theta();
  const Eigen::Index n = theta.size();
  if (index < 0 || index >= n) throw DomainError("conditional_gumbel: outcome index out of range");
  if (!std::isfinite(static_cast<double>(theta[index]))) {
    throw DomainError("conditional_gumbel: conditioned category has zero probability");
  }
  if (exponentials.size() != n) throw DomainError("conditional_gumbel: need one exponential per category");

  const Scalar log_z = logits.log_partition();
  const Scalar top = -std::log(exponentials[index]) + log_z;
  // E_i / Z(θ) == exp(-top)
  const Scalar tail = exponentials[index] * std::exp(-log_z);

  Vector<Scalar> values(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == index) {
      values[j] = top;
      continue;
    }
    Scalar v = -std::log(exponentials[j] * std::exp(-theta[j]) + tail);
    // Mathematically v < top; guard against rounding to equality.
    if (!(v < top)) v = std::nextafter(top, -std::numeric_limits<Scalar>::infinity());
    values[j] = v;
  }
  PerturbedLogits<Scalar> out;
  out.values = std::move(values);
  out.argmax_index = index;
  return out;
}

template <typename Scalar>
PerturbedLogits<Scalar> conditional_gumbel_sample(const CategoricalLogits<Scalar>& logits, Eigen::Index index,
                                                  Rng& rng) {
  Vector<Scalar> e(logits.size());
  for (Eigen::Index j = 0; j < e.size(); ++j) e[j] = static_cast<Scalar>(rng.exponential());
  return conditional_gumbel_from_exponentials(logits, index, e);
}

template <typename Scalar>
PerturbedLogits<Scalar> conditional_gumbel_sample(const CategoricalLogits<Scalar>& logits,
                                                  const HardSample<Scalar>& outcome, Rng& rng) {
  return conditional_gumbel_sample(logits, outcome.index, rng);
}

}  // namespace grmc
