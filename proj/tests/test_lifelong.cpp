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
#include <random>

#include <gtest/gtest.h>

#include "safepg/lifelong.hpp"
#include "test_util.hpp"

namespace safepg {
namespace {

using testing::numeric_gradient;
using testing::random_history;
using testing::random_mat;
using testing::random_stats;
using testing::random_vec;

KnowledgeBase with(const Mat& L, const Mat& S, double mu1, double mu2) {
  KnowledgeBase kb;
  kb.L = L;
  kb.S = S;
  kb.mu1 = mu1;
  kb.mu2 = mu2;
  return kb;
}

TEST(Kron, VecIdentity) {
  std::mt19937_64 rng(1);
  const Mat a = random_mat(3, 4, rng), x = random_mat(4, 2, rng), b = random_mat(2, 5, rng);
  EXPECT_LT((vec(a * x * b) - kron(b.transpose(), a) * vec(x)).norm(), 1e-12);
  EXPECT_EQ(unvec(vec(x), 4, 2), x);
}

TEST(InitKnowledge, DiagonalBasisAndZeroCoefficients) {
  const KnowledgeBase kb = init_knowledge(3, 2, 1.0, 0.5, 2.0, 4);
  Mat L(3, 2);
  L << 1, 0, 0, 1, 0, 0;
  EXPECT_EQ(kb.L, L);
  EXPECT_EQ(kb.S, Mat::Zero(2, 4));
  const KnowledgeBase one = init_knowledge(1, 1, 1.0, 0.5, 2.0, 1);
  EXPECT_EQ(one.L, Mat::Ones(1, 1));
  const KnowledgeBase z = init_knowledge(5, 3, 1.3, 1.0, 2.0, 2);
  const EigenRange er = eigen_range(z.L.transpose() * z.L);
  EXPECT_NEAR(er.min, 1.69, 1e-12);
  EXPECT_NEAR(er.max, 1.69, 1e-12);
}

TEST(InitKnowledge, RejectsBadParameters) {
  EXPECT_THROW(init_knowledge(3, 2, 2.0, 0.5, 2.0, 4), ConfigError);
  EXPECT_THROW(init_knowledge(3, 2, 1.0, 2.0, 0.5, 4), ConfigError);
  EXPECT_THROW(init_knowledge(2, 3, 1.0, 0.5, 2.0, 4), ContractViolation);
}

TEST(ThetaVector, LayoutRoundTrip) {
  std::mt19937_64 rng(2);
  const Mat L = random_mat(4, 2, rng), S = random_mat(2, 3, rng);
  const ThetaVector th = ThetaVector::from(L, S, true);
  EXPECT_EQ(th.L(), L);
  EXPECT_EQ(th.S(), S);
  EXPECT_EQ(th.values.size(), 4 * 2 + 2 * 3);
  EXPECT_EQ(th.values.segment(th.s_offset(2), 2), S.col(2));
}

TEST(Objective, RegularizerOnlyWithoutData) {
  KnowledgeBase kb = init_knowledge(3, 2, 1.0, 0.5, 2.0, 3, 0.1, 0.5);
  EXPECT_DOUBLE_EQ(objective_e_r(kb, RoundHistory{3, {}}), 1.0);
  std::mt19937_64 rng(3);
  kb.S = random_mat(2, 3, rng);
  EXPECT_NEAR(objective_e_r(kb, RoundHistory{3, {}}),
              0.1 * kb.S.squaredNorm() + 0.5 * kb.L.squaredNorm(), 1e-14);
}

TEST(Objective, SumOfWeightedLosses) {
  std::mt19937_64 rng(4);
  const RoundHistory h = random_history(3, 7, 2, rng);
  const KnowledgeBase kb = with(random_mat(3, 2, rng), random_mat(2, 3, rng), 0.2, 0.3);
  double direct = 0.2 * kb.S.squaredNorm() + 0.3 * kb.L.squaredNorm();
  for (const RoundEntry& e : h.rounds) direct += e.eta * task_loss(e.stats, kb.alpha(e.task_id));
  EXPECT_NEAR(objective_e_r(kb, h), direct, 1e-10 * std::abs(direct));
  // The aggregated quadratics reproduce the same sum.
  const auto tq = aggregate(h, 3);
  double agg = 0.2 * kb.S.squaredNorm() + 0.3 * kb.L.squaredNorm();
  for (int t = 0; t < 3; ++t) agg += tq[t].value(kb.alpha(t));
  EXPECT_NEAR(agg, direct, 1e-10 * std::abs(direct));
}

TEST(UpdateL, ZeroWithoutData) {
  std::mt19937_64 rng(5);
  EXPECT_EQ(update_L_closed_form(RoundHistory{2, {}}, random_mat(2, 2, rng), 0.1, 3),
            Mat::Zero(3, 2));
}

TEST(UpdateL, OneTaskOneStepByHand) {
  // d = 2, k = 1: e(L) = mu2 |L|^2 + (1 / 2 s2) (u - phi^T L s)^2 + const.
  Trajectory tr;
  Vec x(1);
  x << 0.6;
  tr.states = {x, x};
  tr.actions = {Vec::Constant(1, 1.3)};
  tr.costs = {0.0};
  const double sigma = 0.5, mu2 = 0.2, s = 1.7;
  RoundHistory h{1, {}};
  h.add(0, summarize({tr}, linear_with_bias(1), sigma, 1), 1.0);
  const Mat L = update_L_closed_form(h, Mat::Constant(1, 1, s), mu2, 2);
  Vec phi(2);
  phi << 0.6, 1.0;
  // Stationarity: 2 mu2 L = (s / s2) (u - s phi^T L) phi, solved in closed form.
  const double s2 = sigma * sigma;
  const Mat a = 2.0 * mu2 * Mat::Identity(2, 2) + (s * s / s2) * phi * phi.transpose();
  const Vec expect = a.inverse() * (s * 1.3 / s2 * phi);
  EXPECT_LT((vec(L) - expect).norm(), 1e-12);
}

TEST(UpdateL, StationaryByFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 20; ++i) {
    const int tasks = 1 + i % 3, k = 1 + i % 2, sd = 1 + i % 3;
    const int d = sd + 1;
    const RoundHistory h = random_history(tasks, 2 * tasks + 1, sd, rng);
    const Mat S = random_mat(k, tasks, rng);
    const Mat L = update_L_closed_form(h, S, 0.3, d);
    auto e = [&](const Vec& l) { return objective_e_r(with(unvec(l, d, k), S, 0.2, 0.3), h); };
    EXPECT_LT(numeric_gradient(e, vec(L), 1e-6).norm(), 1e-7);
    // The exact gradient through the normal equations is far smaller.
    const auto [z, v] = assemble_L_system(aggregate(h, d), S, 0.3, d);
    EXPECT_LT((z * vec(L) - v).norm(), 1e-8);
  }
}

TEST(UpdateS, UnobservedColumnsStayZeroAndZeroBasisGivesZero) {
  std::mt19937_64 rng(7);
  RoundHistory h{3, {}};
  h.add(1, random_stats(2, rng), 1.0);
  const Mat S = update_S_closed_form(h, random_mat(3, 2, rng), 0.1);
  EXPECT_EQ(S.col(0), Vec::Zero(2));
  EXPECT_EQ(S.col(2), Vec::Zero(2));
  EXPECT_GT(S.col(1).norm(), 0.0);
  EXPECT_EQ(update_S_closed_form(h, Mat::Zero(3, 2), 0.1), Mat::Zero(2, 3));
}

TEST(UpdateS, StationaryByFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 20; ++i) {
    const int tasks = 1 + i % 3, k = 1 + i % 2, sd = 1 + i % 3;
    const int d = sd + 1;
    const RoundHistory h = random_history(tasks, 2 * tasks + 1, sd, rng);
    const Mat L = random_mat(d, k, rng);
    const Mat S = update_S_closed_form(h, L, 0.25);
    for (int t = 0; t < tasks; ++t) {
      auto e = [&](const Vec& s) {
        Mat s2 = S;
        s2.col(t) = s;
        return objective_e_r(with(L, s2, 0.25, 0.1), h);
      };
      EXPECT_LT(numeric_gradient(e, S.col(t), 1e-6).norm(), 1e-7);
      const auto [z, v] = assemble_s_system(aggregate(h, d)[t], L, 0.25);
      EXPECT_LT((z * S.col(t) - v).norm(), 1e-8);
    }
  }
}

TEST(Alternating, MonotoneTrace) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) {
    const RoundHistory h = random_history(3, 9, 2, rng);
    KnowledgeBase kb = init_knowledge(3, 2, 1.0, 0.5, 2.0, 3, 0.1, 0.1);
    if (i % 2) kb.S = random_mat(2, 3, rng);
    const AlternatingResult r = alternating_optimize(kb, h, 15, UpdateMode::kClosedForm);
    ASSERT_EQ(r.trace.size(), 16u);
    for (std::size_t j = 1; j < r.trace.size(); ++j)
      EXPECT_LE(r.trace[j], r.trace[j - 1] + 1e-9 * std::max(1.0, std::abs(r.trace[j - 1])));
    EXPECT_NEAR(r.trace.back(), objective_e_r(r.kb, h), 1e-9 * std::abs(r.trace.back()));
  }
}

TEST(Alternating, StationaryPointIsFixed) {
  std::mt19937_64 rng(10);
  const RoundHistory h = random_history(2, 6, 2, rng);
  const KnowledgeBase kb = init_knowledge(3, 2, 1.0, 0.5, 2.0, 2, 0.1, 0.1);
  const AlternatingResult first = alternating_optimize(kb, h, 3000, UpdateMode::kClosedForm);
  const AlternatingResult again = alternating_optimize(first.kb, h, 5, UpdateMode::kClosedForm);
  EXPECT_LT((again.kb.L - first.kb.L).norm(), 1e-10);
  EXPECT_LT((again.kb.S - first.kb.S).norm(), 1e-10);
}

TEST(Alternating, MatchesJointGradientDescent) {
  std::mt19937_64 rng(11);
  const RoundHistory h = random_history(2, 6, 1, rng);
  const KnowledgeBase kb0 = init_knowledge(2, 1, 1.0, 0.5, 2.0, 2, 0.1, 0.1);
  const AlternatingResult alt = alternating_optimize(kb0, h, 100, UpdateMode::kClosedForm);
  // Joint descent on theta with backtracking, from a small random start.
  auto e = [&](const Vec& th) {
    const ThetaVector t{th, 2, 1, 2, false};
    return objective_e_r(with(t.L(), t.S(), 0.1, 0.1), h);
  };
  Vec th = ThetaVector::from(kb0.L, 0.1 * Mat::Ones(1, 2), false).values;
  double step = 1.0;
  for (int it = 0; it < 200000; ++it) {
    const Vec g = numeric_gradient(e, th, 1e-7);
    if (g.norm() < 1e-9) break;
    const double f0 = e(th);
    while (e(th - step * g) > f0 - 0.5 * step * g.squaredNorm()) step *= 0.5;
    th -= step * g;
    step *= 2.0;
  }
  EXPECT_NEAR(alt.trace.back(), e(th), 1e-6 * std::max(1.0, std::abs(e(th))));
}

TEST(Alternating, GradientModesDecreaseTheObjective) {
  std::mt19937_64 rng(12);
  const RoundHistory h = random_history(3, 9, 2, rng);
  KnowledgeBase kb = init_knowledge(3, 2, 1.0, 0.5, 2.0, 3, 0.1, 0.1);
  kb.S = random_mat(2, 3, rng, 0.1);
  for (UpdateMode m : {UpdateMode::kEReinforce, UpdateMode::kENac}) {
    const AlternatingResult r = alternating_optimize(kb, h, 10, m);
    EXPECT_LT(r.trace.back(), r.trace.front());
  }
}

TEST(RoundLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 10; ++i) {
    const BatchStats st = random_stats(2, rng);
    const ThetaVector th = ThetaVector::from(random_mat(3, 2, rng), random_mat(2, 4, rng), true);
    const auto [l, g] = round_loss_and_grad(st, i % 4, th);
    EXPECT_NEAR(l, task_loss(st, th.L() * th.S().col(i % 4)), 1e-12 * std::abs(l));
    const Vec fd = numeric_gradient(
        [&](const Vec& v) { return round_loss_and_grad(st, i % 4, {v, 3, 2, 4, true}).first; },
        th.values);
    EXPECT_LT((g - fd).norm(), 1e-5 * std::max(1.0, fd.norm()));
  }
}

TEST(Linearize, AnchorAndConstantLoss) {
  std::mt19937_64 rng(14);
  const BatchStats st = random_stats(2, rng);
  const ThetaVector th = ThetaVector::from(random_mat(3, 2, rng), random_mat(2, 2, rng), true);
  const LinearizedLoss lin =
      linearize_loss([&](const ThetaVector& t) { return round_loss_and_grad(st, 1, t); }, th);
  EXPECT_NEAR(lin.value(th), task_loss(st, th.L() * th.S().col(1)), 1e-10);
  const auto n = th.values.size();
  const LinearizedLoss c = linearize_loss(
      [n](const ThetaVector&) { return std::make_pair(2.5, Vec(Vec::Zero(n))); }, th);
  EXPECT_EQ(c.fhat.head(n), Vec::Zero(n));
  EXPECT_EQ(c.fhat(n), 2.5);
  EXPECT_THROW(linearize_loss([n](const ThetaVector&) {
                 return std::make_pair(std::nan(""), Vec(Vec::Zero(n)));
               }, th),
               NumericalFailure);
}

}  // namespace
}  // namespace safepg
