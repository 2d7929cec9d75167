// Copyright 2026 The safepg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "safepg/policy.hpp"
#include "test_util.hpp"

namespace safepg {
namespace {

using testing::numeric_gradient;
using testing::random_trajectories;
using testing::random_vec;

constexpr double kHalfLog2Pi = 0.91893853320467274;

Trajectory one_step(const Vec& x, const Vec& u) {
  Trajectory t;
  t.states = {x, x};
  t.actions = {u};
  t.costs = {0.0};
  return t;
}

TEST(LogPi, StandardNormalAtMean) {
  const FeatureMap f = linear_with_bias(2);
  const GaussianPolicy pol{Vec::Zero(3), 1.0, 1};
  EXPECT_NEAR(log_pi(pol, Vec::Zero(1), Vec::Constant(2, 3.0), f), -kHalfLog2Pi, 1e-12);
}

TEST(LogPi, DensityAtMeanWithWideNoise) {
  const FeatureMap f = linear_with_bias(2);
  Vec a(3);
  a << 0.4, -1.2, 0.3;
  const GaussianPolicy pol{a, 2.0, 1};
  Vec x(2);
  x << 0.7, -0.1;
  const Vec u = pol.mean(f(x));
  EXPECT_NEAR(log_pi(pol, u, x, f), -0.5 * std::log(2.0 * std::numbers::pi * 4.0), 1e-12);
}

TEST(LogPi, MatchesDirectFormula) {
  std::mt19937_64 rng(1);
  const FeatureMap f = linear_with_bias(3);
  for (int i = 0; i < 20; ++i) {
    const GaussianPolicy pol{random_vec(8, rng), 0.3 + 0.1 * i, 2};
    const Vec x = random_vec(3, rng);
    const Vec u = random_vec(2, rng);
    Vec phi(4);
    phi << x, 1.0;
    double direct = 0.0;
    for (int j = 0; j < 2; ++j) {
      const double r = u(j) - pol.alpha.segment(4 * j, 4).dot(phi);
      direct += -0.5 * std::log(2.0 * std::numbers::pi * pol.sigma * pol.sigma) -
                r * r / (2.0 * pol.sigma * pol.sigma);
    }
    EXPECT_NEAR(log_pi(pol, u, x, f), direct, 1e-12);
  }
}

TEST(TaskLoss, SingleStepAtMean) {
  const FeatureMap f = linear_with_bias(1);
  const GaussianPolicy pol{Vec::Zero(2), 1.0, 1};
  EXPECT_NEAR(task_loss(pol, {one_step(Vec::Zero(1), Vec::Zero(1))}, f), kHalfLog2Pi, 1e-12);
}

TEST(TaskLoss, MatchesBruteForceAndIgnoresDuplication) {
  std::mt19937_64 rng(2);
  const FeatureMap f = linear_with_bias(2);
  for (int i = 0; i < 10; ++i) {
    const auto trajs = random_trajectories(4, 5, 2, 1, rng);
    const GaussianPolicy pol{random_vec(3, rng), 0.8, 1};
    double brute = 0.0;
    for (const Trajectory& tr : trajs)
      for (int m = 0; m < tr.length(); ++m) brute -= log_pi(pol, tr.actions[m], tr.states[m], f);
    brute /= trajs.size();
    EXPECT_NEAR(task_loss(pol, trajs, f), brute, 1e-10 * std::abs(brute));
    auto twice = trajs;
    twice.insert(twice.end(), trajs.begin(), trajs.end());
    EXPECT_NEAR(task_loss(pol, twice, f), brute, 1e-10 * std::abs(brute));
  }
}

TEST(TaskLoss, WeightsScaleTrajectoryTerms) {
  std::mt19937_64 rng(3);
  const FeatureMap f = linear_with_bias(2);
  const auto trajs = random_trajectories(3, 4, 2, 1, rng);
  const GaussianPolicy pol{random_vec(3, rng), 0.5, 1};
  const std::vector<double> w = {0.2, 1.0, 3.0};
  double brute = 0.0;
  for (std::size_t k = 0; k < trajs.size(); ++k)
    for (int m = 0; m < trajs[k].length(); ++m)
      brute -= w[k] * log_pi(pol, trajs[k].actions[m], trajs[k].states[m], f);
  brute /= trajs.size();
  EXPECT_NEAR(task_loss(pol, trajs, f, w), brute, 1e-10 * std::abs(brute));
}

TEST(Gradient, ZeroWhenActionsEqualTheMean) {
  std::mt19937_64 rng(4);
  const FeatureMap f = linear_with_bias(2);
  const GaussianPolicy pol{random_vec(3, rng), 0.4, 1};
  auto trajs = random_trajectories(3, 6, 2, 1, rng);
  for (Trajectory& tr : trajs)
    for (int m = 0; m < tr.length(); ++m) tr.actions[m] = pol.mean(f(tr.states[m]));
  EXPECT_LT(grad_alpha_loss(pol, trajs, f).norm(), 1e-12);
}

TEST(Gradient, AgreesWithCentralDifferences) {
  std::mt19937_64 rng(5);
  const FeatureMap f = linear_with_bias(3);
  for (int i = 0; i < 25; ++i) {
    const int adim = 1 + i % 2;
    const auto trajs = random_trajectories(3, 4, 3, adim, rng);
    const GaussianPolicy pol{random_vec(4 * adim, rng), 0.5 + 0.05 * i, adim};
    const BatchStats st = summarize(trajs, f, pol.sigma, adim);
    const Vec g = grad_alpha_loss(st, pol.alpha);
    const Vec fd = numeric_gradient([&](const Vec& a) { return task_loss(st, a); }, pol.alpha);
    EXPECT_LT((g - fd).norm(), 1e-5 * std::max(1.0, fd.norm()));
  }
}

TEST(Fisher, OuterProductOfSingleStep) {
  const FeatureMap f = custom_features(1, 2, [](const Vec&) {
    Vec e(2);
    e << 1.0, 0.0;
    return e;
  });
  const GaussianPolicy pol{Vec::Zero(2), 1.0, 1};
  const Mat fm = fisher_matrix(pol, {one_step(Vec::Zero(1), Vec::Zero(1))}, f);
  Mat expect(2, 2);
  expect << 1.0, 0.0, 0.0, 0.0;
  EXPECT_EQ(fm, expect);
}

TEST(Fisher, PositiveSemidefiniteAndHessianOfLoss) {
  std::mt19937_64 rng(6);
  const FeatureMap f = linear_with_bias(2);
  for (int i = 0; i < 20; ++i) {
    const auto trajs = random_trajectories(2, 3, 2, 1, rng);
    const BatchStats st = summarize(trajs, f, 0.6, 1);
    const Mat fm = fisher_matrix(st);
    EXPECT_GE(eigen_range(fm).min, -1e-10);
    const Vec a = random_vec(3, rng);
    const Vec e = random_vec(3, rng);
    EXPECT_NEAR((grad_alpha_loss(st, a + e) - grad_alpha_loss(st, a) - fm * e).norm(), 0.0,
                1e-9 * std::max(1.0, (fm * e).norm()));
  }
}

TEST(BaseLearnerStep, ZeroGradientKeepsAlpha) {
  const Vec a = Vec::LinSpaced(3, -1.0, 1.0);
  PGGradient g{Vec::Zero(3), Mat::Identity(3, 3)};
  EXPECT_EQ(base_learner_step(BaseLearner::kEReinforce, a, g, 0.5), a);
  EXPECT_EQ(base_learner_step(BaseLearner::kENac, a, g, 0.5), a);
}

TEST(BaseLearnerStep, IdentityFisherMakesKindsAgree) {
  std::mt19937_64 rng(7);
  const Vec a = random_vec(4, rng);
  PGGradient g{random_vec(4, rng), Mat::Identity(4, 4)};
  const Vec r = base_learner_step(BaseLearner::kEReinforce, a, g, 0.3);
  const Vec n = base_learner_step(BaseLearner::kENac, a, g, 0.3);
  EXPECT_LT((r - n).norm(), 1e-5 * g.grad.norm());
}

TEST(BaseLearnerStep, NaturalStepSolvesTheFisherSystem) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 10; ++i) {
    const Mat b = testing::random_mat(5, 5, rng);
    const Mat fm = b * b.transpose() + 0.1 * Mat::Identity(5, 5);
    const Vec a = random_vec(5, rng);
    PGGradient g{random_vec(5, rng), fm};
    const Vec step = base_learner_step(BaseLearner::kENac, a, g, 0.7);
    const Mat reg = fm + enac_regularizer(fm) * Mat::Identity(5, 5);
    const Vec dense = reg.fullPivLu().solve(g.grad);
    EXPECT_LT((step - (a - 0.7 * dense)).norm(), 1e-9 * std::max(1.0, dense.norm()));
  }
  EXPECT_THROW(base_learner_step(BaseLearner::kENac, Vec::Zero(2), {Vec::Zero(2), {}}, 1.0),
               ContractViolation);
}

TEST(CostPolicyGradient, MatchesDirectScoreSum) {
  std::mt19937_64 rng(9);
  const FeatureMap f = linear_with_bias(2);
  const auto trajs = random_trajectories(5, 4, 2, 1, rng);
  const GaussianPolicy pol{random_vec(3, rng), 0.9, 1};
  double mean = 0.0;
  for (const Trajectory& tr : trajs) mean += trajectory_cost(tr) / trajs.size();
  Vec g = Vec::Zero(3);
  for (const Trajectory& tr : trajs) {
    Vec score = Vec::Zero(3);
    for (int m = 0; m < tr.length(); ++m) {
      // Score of log pi by finite differences in alpha.
      score += numeric_gradient(
          [&](const Vec& a) { return log_pi({a, pol.sigma, 1}, tr.actions[m], tr.states[m], f); },
          pol.alpha);
    }
    g += (trajectory_cost(tr) - mean) / trajs.size() * score;
  }
  const PGGradient pg = cost_policy_gradient(pol, trajs, f);
  EXPECT_LT((pg.grad - g).norm(), 1e-6 * std::max(1.0, g.norm()));
  ASSERT_TRUE(pg.fisher.has_value());
  EXPECT_GE(eigen_range(*pg.fisher).min, -1e-10);
}

TEST(CostWeights, RangeAndDegenerateCases) {
  std::mt19937_64 rng(10);
  auto trajs = random_trajectories(6, 3, 2, 1, rng);
  for (double w : cost_weights(trajs, 0.0)) EXPECT_EQ(w, 1.0);
  const auto w = cost_weights(trajs, 4.0);
  double lo = 2.0, hi = 0.0;
  for (double x : w) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  EXPECT_DOUBLE_EQ(hi, 1.0);
  EXPECT_NEAR(lo, std::exp(-4.0), 1e-15);
  for (Trajectory& tr : trajs) tr.costs.assign(tr.costs.size(), 0.5);
  for (double x : cost_weights(trajs, 4.0)) EXPECT_EQ(x, 1.0);
}

TEST(Summarize, MergeEqualsConcatenation) {
  std::mt19937_64 rng(11);
  const FeatureMap f = linear_with_bias(2);
  const auto a = random_trajectories(2, 3, 2, 1, rng);
  const auto b = random_trajectories(3, 5, 2, 1, rng);
  auto ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  const BatchStats m = merge(summarize(a, f, 0.5, 1), summarize(b, f, 0.5, 1));
  const BatchStats c = summarize(ab, f, 0.5, 1);
  EXPECT_LT((m.G - c.G).norm(), 1e-12);
  EXPECT_LT((m.h - c.h).norm(), 1e-12);
  EXPECT_NEAR(m.c, c.c, 1e-12);
  EXPECT_EQ(m.n, c.n);
  EXPECT_EQ(m.terms, c.terms);
  EXPECT_EQ(m.horizon, 5);
}

TEST(Summarize, RejectsMalformedInput) {
  const FeatureMap f = linear_with_bias(2);
  EXPECT_THROW(summarize({}, f, 0.5, 1), ContractViolation);
  std::mt19937_64 rng(12);
  const auto t = random_trajectories(2, 3, 2, 1, rng);
  EXPECT_THROW(summarize(t, f, 0.0, 1), ContractViolation);
  EXPECT_THROW(summarize(t, f, 0.5, 1, {1.0}), ContractViolation);
  EXPECT_THROW(summarize(t, f, 0.5, 1, {1.0, -1.0}), ContractViolation);
  const FeatureMap tight = custom_features(2, 3, f.phi, 1e-3);
  EXPECT_THROW(summarize(t, tight, 0.5, 1), ContractViolation);
}

TEST(Lemma1Bound, CollapsesWithoutConstraints) {
  TaskSpec task;
  task.horizon = 1;
  task.sigma = 1.0;
  EXPECT_DOUBLE_EQ(lemma1_grad_bound(task, {}, 1.0, 1.0, 1.0).value, 1.0);
  task.horizon = 2;
  EXPECT_DOUBLE_EQ(lemma1_grad_bound(task, {}, 1.0, 1.0, 1.0).value, 2.0);
}

TEST(Lemma1Bound, MatchesFormulaAndScalesWithHorizon) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 10; ++i) {
    SafetyConstraint c1{testing::random_mat(3, 3, rng), random_vec(3, rng)};
    SafetyConstraint c2{testing::random_mat(3, 3, rng), random_vec(3, rng)};
    TaskSpec task;
    task.horizon = 7;
    task.sigma = 0.3;
    const double cmax = 1.5, umax = 2.0, phimax = 1.7;
    const double n1 = 1.0 / Eigen::JacobiSVD<Mat>(c1.A).singularValues()(2);
    const double n2 = 1.0 / Eigen::JacobiSVD<Mat>(c2.A).singularValues()(2);
    const double a1 = std::max(n1 * (c1.b.norm() + cmax), n2 * (c2.b.norm() + cmax));
    const double expect = 7 / 0.09 * (umax + a1 * phimax) * phimax;
    const double got = lemma1_grad_bound(task, {&c1, &c2}, cmax, umax, phimax).value;
    EXPECT_NEAR(got, expect, 1e-9 * expect);
    task.horizon = 14;
    EXPECT_NEAR(lemma1_grad_bound(task, {&c1, &c2}, cmax, umax, phimax).value, 2.0 * got,
                1e-9 * got);
  }
}

TEST(Lemma1Bound, HoldsOnSampledBatches) {
  std::mt19937_64 rng(14);
  const FeatureMap f = linear_with_bias(2);
  TaskSpec task;
  task.horizon = 5;
  task.sigma = 0.4;
  SafetyConstraint con{Mat::Identity(3, 3), Vec::Constant(3, 0.5)};
  for (int i = 0; i < 20; ++i) {
    const auto trajs = random_trajectories(4, 5, 2, 1, rng);
    const BatchStats st = summarize(trajs, f, task.sigma, 1);
    // A feasible alpha: inside the box and with slack bounded by c_max.
    const Vec a = -0.2 * Vec::Ones(3) + 0.1 * random_vec(3, rng).cwiseAbs().cwiseMin(1.0);
    ASSERT_TRUE(con.satisfied(a));
    const double bound = lemma1_grad_bound(task, {&con}, 2.0, st.u_max, st.phi_max).value;
    EXPECT_LE(grad_alpha_loss(st, a).norm(), bound);
  }
}

}  // namespace
}  // namespace safepg
