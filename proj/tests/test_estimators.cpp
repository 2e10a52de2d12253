#include <cmath>

#include <gtest/gtest.h>

#include "grmc/estimators.hpp"

namespace grmc {
namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

TEST(Jacobian, MatchesFiniteDifferences) {
  const Eigen::VectorXd values = vec({0.4, -1.0, 2.2, 0.1});
  const Eigen::VectorXd v = vec({1.5, -0.3, 0.7, 2.0});
  for (double lambda : {0.1, 0.5, 1.0, 3.0}) {
    const auto jvp = softmax_jacobian_vector_product(v, Perturbed::from(values), lambda);
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < values.size(); ++j) {
      Eigen::VectorXd up = values, dn = values;
      up[j] += h;
      dn[j] -= h;
      const double fd = (v.dot(tempered_softmax(up, lambda)) - v.dot(tempered_softmax(dn, lambda))) / (2 * h);
      EXPECT_NEAR(jvp[j], fd, 1e-7 * std::max(1.0, std::abs(fd))) << "lambda " << lambda << " j " << j;
    }
  }
}

TEST(ExactGradient, FrozenLinearValue) {
  // Oracle: π_j (c_j - Σ π c) from an independent script.
  const Logits logits(vec({0.3, -0.4, 1.1, 0.0}));
  const LinearObjective f(vec({1.0, -2.0, 0.5, 3.0}));
  const auto g = exact_expectation_gradient(f, logits);
  EXPECT_NEAR(g[0], 0.056275583419486526, 1e-14);
  EXPECT_NEAR(g[1], -0.3058599858643916, 1e-14);
  EXPECT_NEAR(g[2], -0.12409188080465039, 1e-14);
  EXPECT_NEAR(g[3], 0.3736762832495555, 1e-14);
}

TEST(ExactGradient, MatchesFiniteDifferencesOfExpectation) {
  Eigen::MatrixXd q(3, 3);
  q << 1, 2, -1, 0, 0.5, 1, 3, -2, 0;
  const QuadraticObjective f(q, vec({0.2, -0.1, 0.4}));
  const Eigen::VectorXd theta = vec({0.1, 0.9, -0.6});
  auto expectation = [&](const Eigen::VectorXd& t) {
    const auto p = tempered_softmax(t, 1.0);
    double e = 0;
    for (Eigen::Index i = 0; i < 3; ++i) e += p[i] * f.value(Outcome::at(i, 3).one_hot);
    return e;
  };
  const auto g = exact_expectation_gradient(f, Logits(theta));
  for (Eigen::Index j = 0; j < 3; ++j) {
    Eigen::VectorXd up = theta, dn = theta;
    up[j] += 1e-6;
    dn[j] -= 1e-6;
    EXPECT_NEAR(g[j], (expectation(up) - expectation(dn)) / 2e-6, 1e-8);
  }
}

TEST(ExactGradient, RefusesLargeCategoryCounts) {
  const Logits logits(Eigen::VectorXd::Zero(kMaxEnumerationCategories + 1));
  const LinearObjective f(Eigen::VectorXd::Ones(kMaxEnumerationCategories + 1));
  EXPECT_THROW(exact_expectation_gradient(f, logits), CapacityError);
  EXPECT_NO_THROW(exact_expectation_gradient(LinearObjective(Eigen::VectorXd::Ones(20)), Logits(Eigen::VectorXd::Zero(20))));
}

TEST(Objectives, QuadraticGradient) {
  Eigen::MatrixXd q(2, 2);
  q << 1, 2, 3, 4;
  const QuadraticObjective f(q, vec({1, -1}));
  const Eigen::VectorXd d = vec({1, 0});
  EXPECT_DOUBLE_EQ(f.value(d), 2.0);
  EXPECT_EQ(f.gradient(d), vec({3, 4}));
  EXPECT_THROW(QuadraticObjective(Eigen::MatrixXd::Zero(2, 3), vec({1, 1})), DomainError);
}

TEST(Stgs, ForwardIsHardAndBackwardIsTheJacobian) {
  const Logits logits(vec({0.5, -0.5, 1.0}));
  const LinearObjective f(vec({2.0, -1.0, 0.5}));
  Rng a(3), b(3);
  const auto est = stgs_gradient(f, logits, 0.5, a);
  const auto perturbed = perturb_logits(logits, b);
  EXPECT_EQ(est.outcome.index, perturbed.argmax_index);
  EXPECT_EQ(est.outcome.one_hot.sum(), 1.0);
  const auto expected = softmax_jacobian_vector_product(f.gradient(est.outcome.one_hot), perturbed, 0.5);
  EXPECT_LT((est.grad_theta - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Estimators, ConstantPayoffGivesExactlyZero) {
  const Logits logits(vec({0.2, 1.0, -0.3, 0.0, 0.7}));
  const LinearObjective f(Eigen::VectorXd::Constant(5, 3.7));
  Rng o(1), c(2);
  for (int t = 0; t < 200; ++t) {
    EXPECT_TRUE(stgs_gradient(f, logits, 0.1, o).grad_theta.isZero(0.0));
    EXPECT_TRUE(grmc_gradient(f, logits, {EstimatorKind::GRMC, 0.1, 10}, o, c).grad_theta.isZero(0.0));
  }
}

TEST(Estimators, ConfigValidation) {
  EXPECT_THROW((EstimatorConfig{EstimatorKind::GRMC, 0.0, 1}.validate()), DomainError);
  EXPECT_THROW((EstimatorConfig{EstimatorKind::GRMC, 1.0, 0}.validate()), DomainError);
  EXPECT_EQ(estimator_kind_from_string(to_string(EstimatorKind::STGS)), EstimatorKind::STGS);
  EXPECT_EQ(estimator_kind_from_string(to_string(EstimatorKind::GRMC)), EstimatorKind::GRMC);
  EXPECT_THROW(estimator_kind_from_string("reinforce"), DomainError);
  const Logits logits(vec({0, 0}));
  Rng r(1);
  EXPECT_THROW(stgs_gradient(LinearObjective(vec({1, 2, 3})), logits, 1.0, r), DomainError);
}

TEST(Grmc, SharesOutcomesWithStgsUnderCommonSeeds) {
  const Logits logits(vec({0.3, 0.1, -0.2, 0.8}));
  const LinearObjective f(vec({1, 2, 3, 4}));
  Rng so(42), go(42), gc(43);
  for (int t = 0; t < 100; ++t) {
    EXPECT_EQ(stgs_gradient(f, logits, 0.5, so).outcome.index,
              grmc_gradient(f, logits, {EstimatorKind::GRMC, 0.5, 5}, go, gc).outcome.index);
  }
}

TEST(Grmc, IsConditionalMeanOfStgs) {
  // Averaging STGS draws that landed on D = i must agree with the
  // Rao-Blackwellised product at D = i (large K).
  const Eigen::VectorXd theta = vec({0.4, -0.2, 0.1});
  const Logits logits(theta);
  const Eigen::VectorXd v = vec({1.0, -2.0, 0.5});
  const double lambda = 0.5;
  Rng rng(8);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(3), sumsq = Eigen::VectorXd::Zero(3);
  int hits = 0;
  for (int t = 0; t < 200000; ++t) {
    const auto p = perturb_logits(logits, rng);
    if (p.argmax_index != 0) continue;
    const auto j = softmax_jacobian_vector_product(v, p, lambda);
    sum += j;
    sumsq += j.cwiseAbs2();
    ++hits;
  }
  const Eigen::VectorXd mean = sum / hits;
  const Eigen::VectorXd se = ((sumsq / hits - mean.cwiseAbs2()) / hits).cwiseSqrt();
  Rng cond(9);
  const auto rb = rao_blackwell_jacobian_product(v, logits, 0, lambda, 200000, cond);
  for (Eigen::Index j = 0; j < 3; ++j) EXPECT_LT(std::abs(rb[j] - mean[j]), 4.0 * se[j] + 1e-4) << j;
}

TEST(Grmc, KEqualsOneStillPreservesMean) {
  const Logits logits(vec({0.0, 0.5, -0.5}));
  const LinearObjective f(vec({1.0, 0.0, -1.0}));
  const auto stgs = estimator_stats(f, logits, {EstimatorKind::STGS, 0.5, 1}, 40000, 5);
  const auto grmc = estimator_stats(f, logits, {EstimatorKind::GRMC, 0.5, 1}, 40000, 5);
  EXPECT_LT(max_standardized_mean_gap(stgs, grmc), 4.0);
}

TEST(EstimatorStats, DecompositionAndFlags) {
  const Logits logits(vec({1.0, 0.5, 0.0, -0.5, -1.0}));
  const LinearObjective f(vec({1.0, -2.0, 0.5, 3.0, -1.0}));
  const auto st = estimator_stats(f, logits, {EstimatorKind::GRMC, 0.5, 10}, 3000, 17);
  EXPECT_NEAR(st.mse, st.bias_sq + st.trace_variance, 1e-12 * std::max(1.0, st.mse));
  EXPECT_NEAR(st.bias_sq, (st.mean - st.exact).squaredNorm(), 1e-15);
  EXPECT_NEAR(st.trace_variance, st.variance.sum(), 1e-15);
  EXPECT_TRUE(st.ci_reliable);
  EXPECT_EQ(st.trials, 3000u);
  EXPECT_EQ(st.seed, 17u);
  EXPECT_EQ(st.exact, exact_expectation_gradient(f, logits));

  const auto two = estimator_stats(f, logits, {EstimatorKind::STGS, 0.5, 1}, 2, 17);
  EXPECT_FALSE(two.ci_reliable);
  EXPECT_THROW(estimator_stats(f, logits, {EstimatorKind::STGS, 0.5, 1}, 1, 17), DomainError);
}

TEST(EstimatorStats, ThreadCountDoesNotChangeResults) {
  const Logits logits(vec({1.0, 0.5, 0.0, -0.5, -1.0}));
  const LinearObjective f(vec({1.0, -2.0, 0.5, 3.0, -1.0}));
  const EstimatorConfig cfg{EstimatorKind::GRMC, 0.1, 10};
  const auto a = estimator_stats(f, logits, cfg, 5000, 99, 1);
  const auto b = estimator_stats(f, logits, cfg, 5000, 99, 3);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.variance, b.variance);
  EXPECT_EQ(a.mse, b.mse);
}

TEST(EstimatorStats, GrmcVarianceBelowStgsAtMatchedSeeds) {
  const Logits logits(vec({1.0, 0.5, 0.0, -0.5, -1.0}));
  const LinearObjective f(vec({1.0, -2.0, 0.5, 3.0, -1.0}));
  for (double lambda : {0.1, 1.0}) {
    const auto stgs = estimator_stats(f, logits, {EstimatorKind::STGS, lambda, 1}, 10000, 3);
    const auto grmc = estimator_stats(f, logits, {EstimatorKind::GRMC, lambda, 10}, 10000, 3);
    EXPECT_LE(grmc.trace_variance, stgs.trace_variance) << lambda;
    EXPECT_LT(max_standardized_mean_gap(grmc, stgs), 3.0) << lambda;
  }
}

}  // namespace
}  // namespace grmc
