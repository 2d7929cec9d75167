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

// Shared-basis knowledge (L, S), the regularized online objective
//
//   e_r(L, S) = sum_j eta_j l_{t_j}(L s_{t_j}) + mu1 ||S||_F^2 + mu2 ||L||_F^2
//
// and its alternating minimization. vec() is column-major throughout, so
// alpha = L s = (s^T (x) I_d) vec(L) and the L-block Hessian of a round is
// (s s^T (x) G) / (n sigma^2).

#ifndef SAFEPG_LIFELONG_HPP_
#define SAFEPG_LIFELONG_HPP_

#include <cmath>
#include <functional>
#include <numbers>
#include <set>
#include <utility>
#include <vector>

#include "safepg/errors.hpp"
#include "safepg/linalg.hpp"
#include "safepg/policy.hpp"

namespace safepg {

struct KnowledgeBase {
  Mat L;  // d x k
  Mat S;  // k x |T|
  double mu1 = 0.1;
  double mu2 = 0.1;
  double p = 0.5;
  double q = 2.0;

  int d() const { return static_cast<int>(L.rows()); }
  int k() const { return static_cast<int>(L.cols()); }
  int num_tasks() const { return static_cast<int>(S.cols()); }
  Vec alpha(int task) const { return L * S.col(task); }
};

inline KnowledgeBase init_knowledge(int d, int k, double zeta, double p,
                                    double q, int num_tasks, double mu1 = 0.1,
                                    double mu2 = 0.1) {
  require(d >= k && k >= 1, "init_knowledge: need d >= k >= 1");
  require(num_tasks >= 1, "init_knowledge: need at least one task");
  require(mu1 > 0 && mu2 > 0, "init_knowledge: mu1 and mu2 must be > 0");
  if (!(p > 0 && p <= q))
    throw ConfigError("init_knowledge: need 0 < p <= q");
  if (zeta * zeta < p || zeta * zeta > q)
    throw ConfigError("init_knowledge: zeta^2 must lie in [p, q]");
  KnowledgeBase kb;
  kb.L = Mat::Zero(d, k);
  for (int i = 0; i < k; ++i) kb.L(i, i) = zeta;
  kb.S = Mat::Zero(k, num_tasks);
  kb.mu1 = mu1;
  kb.mu2 = mu2;
  kb.p = p;
  kb.q = q;
  return kb;
}

// Flattened decision variable [vec(L); vec(S)].
struct ThetaVector {
  Vec values;
  int d = 0;
  int k = 0;
  int num_tasks = 0;
  bool constrained = false;

  static ThetaVector from(const Mat& L, const Mat& S, bool constrained) {
    require(L.cols() == S.rows(), "ThetaVector: L and S disagree on k");
    ThetaVector t;
    t.d = static_cast<int>(L.rows());
    t.k = static_cast<int>(L.cols());
    t.num_tasks = static_cast<int>(S.cols());
    t.constrained = constrained;
    t.values.resize(L.size() + S.size());
    t.values << vec(L), vec(S);
    return t;
  }

  static ThetaVector from(const KnowledgeBase& kb, bool constrained) {
    return from(kb.L, kb.S, constrained);
  }

  Mat L() const { return unvec(values.head(d * k), d, k); }
  Mat S() const { return unvec(values.tail(k * num_tasks), k, num_tasks); }
  // Offset of task t's coefficient block inside values.
  int s_offset(int task) const { return d * k + k * task; }
};

struct RoundEntry {
  int task_id = 0;
  BatchStats stats;
  double eta = 1.0;
};

struct RoundHistory {
  int num_tasks = 0;
  std::vector<RoundEntry> rounds;

  void add(int task_id, BatchStats stats, double eta) {
    require(task_id >= 0 && task_id < num_tasks, "RoundHistory: task id out of range");
    require(eta > 0, "RoundHistory: eta must be > 0");
    rounds.push_back({task_id, std::move(stats), eta});
  }

  std::set<int> observed() const {
    std::set<int> out;
    for (const RoundEntry& e : rounds) out.insert(e.task_id);
    return out;
  }

  bool empty() const { return rounds.empty(); }
};

// eta-weighted quadratic of one task's rounds:
//   sum_j eta_j l_j(alpha) = konst + cw / 2 - alpha^T hw + alpha^T Gw alpha / 2.
struct TaskQuadratic {
  Mat Gw;
  Vec hw;
  double cw = 0.0;
  double konst = 0.0;
  bool observed = false;

  double value(const Vec& a) const {
    return konst + 0.5 * cw - a.dot(hw) + 0.5 * a.dot(Gw * a);
  }
  Vec grad(const Vec& a) const { return Gw * a - hw; }
};

inline std::vector<TaskQuadratic> aggregate(const RoundHistory& history, int d) {
  std::vector<TaskQuadratic> out(history.num_tasks);
  for (TaskQuadratic& tq : out) {
    tq.Gw = Mat::Zero(d, d);
    tq.hw = Vec::Zero(d);
  }
  for (const RoundEntry& e : history.rounds) {
    const BatchStats& st = e.stats;
    require(st.dim() == d, "aggregate: batch dimension does not match L");
    require(st.n >= 1, "aggregate: empty batch");
    const double s2 = st.sigma * st.sigma;
    const double w = e.eta / (st.n * s2);
    TaskQuadratic& tq = out[e.task_id];
    tq.Gw += w * st.G;
    tq.hw += w * st.h;
    tq.cw += w * st.c;
    tq.konst += e.eta * st.terms / st.n * 0.5 * std::log(2.0 * std::numbers::pi * s2);
    tq.observed = true;
  }
  return out;
}

inline double objective_e_r(const KnowledgeBase& kb, const RoundHistory& history) {
  require(history.num_tasks == kb.num_tasks(), "objective_e_r: task count mismatch");
  double total = kb.mu1 * kb.S.squaredNorm() + kb.mu2 * kb.L.squaredNorm();
  for (const RoundEntry& e : history.rounds)
    total += e.eta * task_loss(e.stats, kb.alpha(e.task_id));
  return total;
}

// Normal equations in vec(L): Z_L vec(L) = v_L.
inline std::pair<Mat, Vec> assemble_L_system(const std::vector<TaskQuadratic>& tq,
                                             const Mat& S, double mu2, int d) {
  const int k = static_cast<int>(S.rows());
  Mat z = 2.0 * mu2 * Mat::Identity(d * k, d * k);
  Vec v = Vec::Zero(d * k);
  for (int t = 0; t < static_cast<int>(tq.size()); ++t) {
    if (!tq[t].observed) continue;
    const Vec s = S.col(t);
    z += kron(s * s.transpose(), tq[t].Gw);
    v += kron(s, tq[t].hw);
  }
  return {z, v};
}

inline std::pair<Mat, Vec> assemble_s_system(const TaskQuadratic& tq, const Mat& L,
                                             double mu1) {
  const int k = static_cast<int>(L.cols());
  Mat z = 2.0 * mu1 * Mat::Identity(k, k) + L.transpose() * tq.Gw * L;
  Vec v = L.transpose() * tq.hw;
  return {symmetrize(z), v};
}

inline Mat update_L_closed_form(const RoundHistory& history, const Mat& S,
                                double mu2, int d) {
  require(mu2 > 0, "update_L_closed_form: mu2 must be > 0");
  require(S.cols() == history.num_tasks, "update_L_closed_form: S has wrong width");
  const auto tq = aggregate(history, d);
  const auto [z, v] = assemble_L_system(tq, S, mu2, d);
  return unvec(solve_spd(symmetrize(z), v, "update_L_closed_form"), d, S.rows());
}

inline Mat update_S_closed_form(const RoundHistory& history, const Mat& L,
                                double mu1) {
  require(mu1 > 0, "update_S_closed_form: mu1 must be > 0");
  const auto tq = aggregate(history, static_cast<int>(L.rows()));
  Mat S = Mat::Zero(L.cols(), history.num_tasks);
  for (int t = 0; t < history.num_tasks; ++t) {
    if (!tq[t].observed) continue;
    const auto [z, v] = assemble_s_system(tq[t], L, mu1);
    S.col(t) = solve_spd(z, v, "update_S_closed_form");
  }
  return S;
}

enum class UpdateMode { kClosedForm, kEReinforce, kENac };

struct AlternatingResult {
  KnowledgeBase kb;
  std::vector<double> trace;  // e_r after initialization and each iteration
};

// Step 1 (L with S fixed) then Step 2 (S with L fixed), inner_iters times.
// Gradient modes take steps of size c / j along the block gradient, scaled by
// 1 / lambda_max of the block Hessian (eREINFORCE) or preconditioned by the
// block Hessian itself (eNAC). When every observed column of S is zero, L = 0
// would be a fixed point of the L-step, so the S-step runs first instead.
inline AlternatingResult alternating_optimize(const KnowledgeBase& kb0,
                                              const RoundHistory& history,
                                              int inner_iters, UpdateMode mode,
                                              double rate_c = 0.9) {
  require(inner_iters >= 1, "alternating_optimize: inner_iters must be >= 1");
  require(rate_c > 0 && rate_c < 1, "alternating_optimize: rate c must be in (0,1)");
  require(history.num_tasks == kb0.num_tasks(), "alternating_optimize: task count mismatch");
  AlternatingResult res{kb0, {}};
  KnowledgeBase& kb = res.kb;
  const int d = kb.d();
  const int k = kb.k();
  const auto tq = aggregate(history, d);
  auto objective = [&] {
    double total = kb.mu1 * kb.S.squaredNorm() + kb.mu2 * kb.L.squaredNorm();
    for (int t = 0; t < history.num_tasks; ++t)
      if (tq[t].observed) total += tq[t].value(kb.alpha(t));
    return total;
  };
  bool s_first = true;
  for (int t = 0; t < history.num_tasks; ++t)
    if (tq[t].observed && kb.S.col(t).squaredNorm() > 0.0) s_first = false;

  auto l_step = [&](double rate) {
    const auto [z, v] = assemble_L_system(tq, kb.S, kb.mu2, d);
    const Mat zs = symmetrize(z);
    if (mode == UpdateMode::kClosedForm) {
      kb.L = unvec(solve_spd(zs, v, "L-step"), d, k);
      return;
    }
    const Vec g = zs * vec(kb.L) - v;
    Vec dir;
    if (mode == UpdateMode::kEReinforce)
      dir = g / eigen_range(zs).max;
    else
      dir = natural_direction(zs, g);
    kb.L = unvec(vec(kb.L) - rate * dir, d, k);
  };
  auto s_step = [&](double rate) {
    for (int t = 0; t < history.num_tasks; ++t) {
      if (!tq[t].observed) {
        kb.S.col(t).setZero();
        continue;
      }
      const auto [z, v] = assemble_s_system(tq[t], kb.L, kb.mu1);
      if (mode == UpdateMode::kClosedForm) {
        kb.S.col(t) = solve_spd(z, v, "S-step");
        continue;
      }
      const Vec g = z * kb.S.col(t) - v;
      Vec dir;
      if (mode == UpdateMode::kEReinforce)
        dir = g / eigen_range(z).max;
      else
        dir = natural_direction(z, g);
      kb.S.col(t) -= rate * dir;
    }
  };

  double prev = objective();
  res.trace.push_back(prev);
  for (int j = 1; j <= inner_iters; ++j) {
    const double rate = rate_c / j;
    if (s_first) {
      s_step(rate);
      l_step(rate);
    } else {
      l_step(rate);
      s_step(rate);
    }
    const double cur = objective();
    if (!std::isfinite(cur))
      throw NumericalFailure("alternating_optimize: non-finite objective");
    if (mode == UpdateMode::kClosedForm &&
        cur > prev + 1e-9 * std::max(1.0, std::abs(prev)))
      throw InvariantViolation("alternating_optimize: objective increased");
    res.trace.push_back(cur);
    prev = cur;
  }
  return res;
}

// Loss of one round and its gradient with respect to theta: the L block is
// g s_t^T and the s_t block is L^T g, with g the alpha-gradient.
inline std::pair<double, Vec> round_loss_and_grad(const BatchStats& st, int task,
                                                  const ThetaVector& theta) {
  require(task >= 0 && task < theta.num_tasks, "round_loss_and_grad: bad task id");
  const Mat L = theta.L();
  const Vec s = theta.values.segment(theta.s_offset(task), theta.k);
  const Vec alpha = L * s;
  const Vec g = grad_alpha_loss(st, alpha);
  Vec grad = Vec::Zero(theta.values.size());
  grad.head(theta.d * theta.k) = vec(g * s.transpose());
  grad.segment(theta.s_offset(task), theta.k) = L.transpose() * g;
  return {task_loss(st, alpha), grad};
}

// Affine model f^T [theta; 1] of a loss around an anchor.
struct LinearizedLoss {
  Vec fhat;  // [grad; l - grad^T anchor]
  ThetaVector anchor;

  double value(const ThetaVector& theta) const {
    const auto n = theta.values.size();
    require(fhat.size() == n + 1, "LinearizedLoss: dimension mismatch");
    return fhat.head(n).dot(theta.values) + fhat(n);
  }
};

using LossEvaluator = std::function<std::pair<double, Vec>(const ThetaVector&)>;

inline LinearizedLoss linearize_loss(const LossEvaluator& loss_at,
                                     const ThetaVector& anchor) {
  auto [l, g] = loss_at(anchor);
  if (!std::isfinite(l) || !g.allFinite())
    throw NumericalFailure("linearize_loss: non-finite loss or gradient");
  require(g.size() == anchor.values.size(), "linearize_loss: gradient size mismatch");
  LinearizedLoss out;
  out.anchor = anchor;
  out.fhat.resize(g.size() + 1);
  out.fhat << g, l - g.dot(anchor.values);
  return out;
}

}  // namespace safepg

#endif  // SAFEPG_LIFELONG_HPP_
