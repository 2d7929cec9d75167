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

// Empirical regret against a fixed hindsight comparator, numeric values of
// the regret-bound constants and a growth-rate check for regret curves.

#ifndef SAFEPG_REGRET_HPP_
#define SAFEPG_REGRET_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "safepg/errors.hpp"
#include "safepg/lifelong.hpp"
#include "safepg/policy.hpp"
#include "safepg/projection.hpp"

namespace safepg {

struct RegretRecord {
  int round = 0;
  int task_id = 0;
  double realized = 0.0;
  double cum_realized = 0.0;
  double comparator = 0.0;
  double cum_comparator = 0.0;
  double cum_regret = 0.0;
};

inline std::vector<RegretRecord> empirical_regret(const std::vector<double>& realized,
                                                  const std::vector<double>& comparator,
                                                  const std::vector<int>& task_ids = {}) {
  require(realized.size() == comparator.size(),
          "empirical_regret: realized and comparator lengths differ");
  require(task_ids.empty() || task_ids.size() == realized.size(),
          "empirical_regret: task id list has the wrong length");
  std::vector<RegretRecord> out;
  out.reserve(realized.size());
  double cr = 0.0, cc = 0.0;
  for (std::size_t j = 0; j < realized.size(); ++j) {
    cr += realized[j];
    cc += comparator[j];
    RegretRecord r;
    r.round = static_cast<int>(j) + 1;
    r.task_id = task_ids.empty() ? 0 : task_ids[j];
    r.realized = realized[j];
    r.cum_realized = cr;
    r.comparator = comparator[j];
    r.cum_comparator = cc;
    r.cum_regret = cr - cc;
    out.push_back(r);
  }
  return out;
}

// Per-round losses of a fixed theta on the recorded batches.
inline std::vector<double> losses_at(const ThetaVector& theta, const RoundHistory& history) {
  const Mat L = theta.L();
  const Mat S = theta.S();
  std::vector<double> out;
  out.reserve(history.rounds.size());
  for (const RoundEntry& e : history.rounds)
    out.push_back(task_loss(e.stats, L * S.col(e.task_id)));
  return out;
}

inline std::vector<RegretRecord> empirical_regret(
    const std::vector<double>& realized, const ThetaVector& comparator,
    const RoundHistory& history, const std::vector<SafetyConstraint>& constraints,
    double p, double q) {
  require(realized.size() == history.rounds.size(),
          "empirical_regret: one realized loss per round");
  const FeasibilityReport rep = check_feasible(comparator, constraints, p, q);
  require(rep.feasible, "empirical_regret: comparator is infeasible");
  std::vector<int> ids;
  for (const RoundEntry& e : history.rounds) ids.push_back(e.task_id);
  return empirical_regret(realized, losses_at(comparator, history), ids);
}

struct ComparatorResult {
  ThetaVector theta;
  double total_loss = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct ComparatorOptions {
  double mu = 1e-6;  // regularization of the inner fits
  int inner_iters = 50;
  int max_iters = 20;
  double rel_tol = 1e-6;
};

// Rescales (L, S) so that L^T L = scale I without changing any alpha = L s
// inside the range of L: L <- sqrt(scale) polar(L), S <- L'^T L S / scale.
inline ThetaVector gauge_normalize(const ThetaVector& theta, double scale) {
  require(scale > 0.0, "gauge_normalize: scale must be > 0");
  const Mat L = theta.L();
  const Mat Ln = std::sqrt(scale) * polar_factor(L);
  const Mat Sn = Ln.transpose() * L * theta.S() / scale;
  return ThetaVector::from(Ln, Sn, theta.constrained);
}

// Approximate minimizer of sum_j l_{t_j}(u) over the safe set: alternate a
// weakly regularized unweighted fit of the whole history with a projection,
// starting from each supplied feasible candidate, and keep the best point.
// Each fit is rescaled into the spectral box before projecting so that the
// projection acts on the constraints rather than on the gauge of L.
// Its loss upper-bounds the infimum, so the resulting regret is a lower bound.
inline ComparatorResult hindsight_comparator(
    const RoundHistory& history, const std::vector<SafetyConstraint>& constraints,
    const ProjectionParams& prm, const std::vector<ThetaVector>& candidates,
    const ComparatorOptions& opt = {}) {
  require(!history.empty(), "hindsight_comparator: empty history");
  require(!candidates.empty(), "hindsight_comparator: need a starting point");
  RoundHistory unit = history;
  for (RoundEntry& e : unit.rounds) e.eta = 1.0;
  const std::set<int> observed = history.observed();
  ProjectionParams cp = prm;
  cp.mu1 = cp.mu2 = opt.mu;
  auto total = [&](const ThetaVector& th) {
    double sum = 0.0;
    for (double l : losses_at(th, unit)) sum += l;
    return sum;
  };

  ComparatorResult best;
  best.total_loss = std::numeric_limits<double>::infinity();
  for (const ThetaVector& start : candidates) {
    ThetaVector cur = start;
    cur.constrained = true;
    double cur_loss = total(cur);
    if (cur_loss < best.total_loss) {
      best.theta = cur;
      best.total_loss = cur_loss;
    }
    for (int it = 1; it <= opt.max_iters; ++it) {
      KnowledgeBase kb;
      kb.L = cur.L();
      kb.S = cur.S();
      kb.mu1 = kb.mu2 = opt.mu;
      kb.p = prm.p;
      kb.q = prm.q;
      const AlternatingResult fit =
          alternating_optimize(kb, unit, opt.inner_iters, UpdateMode::kClosedForm);
      const double scale = std::clamp(1.0, prm.p, prm.q);
      const ProjectionResult proj = project_constrained(
          gauge_normalize(ThetaVector::from(fit.kb, false), scale), constraints, observed, cp,
          cur);
      const double loss = total(proj.theta);
      ++best.iterations;
      const bool improved = loss < cur_loss;
      const double rel = (cur_loss - loss) / std::max(1.0, std::abs(cur_loss));
      if (improved) {
        cur = proj.theta;
        cur_loss = loss;
      }
      if (cur_loss < best.total_loss) {
        best.theta = cur;
        best.total_loss = cur_loss;
      }
      if (!improved || rel < opt.rel_tol) {
        best.converged = true;
        break;
      }
    }
  }
  return best;
}

struct LinearComparatorResult {
  ThetaVector theta;
  double value = 0.0;  // g^T u
  bool converged = false;
};

// Local minimizer of g^T u over the safe set of the observed tasks, by the
// barrier method from interior versions of each start. With p == q the basis
// of each start is held fixed and only the coefficients move.
inline LinearComparatorResult linear_comparator(
    const Vec& g, const std::vector<SafetyConstraint>& cons, const std::set<int>& observed,
    double p, double q, double c_max, const std::vector<ThetaVector>& starts) {
  require(!starts.empty(), "linear_comparator: need a starting point");
  LinearComparatorResult best;
  best.value = std::numeric_limits<double>::infinity();
  for (const ThetaVector& start : starts) {
    require(g.size() == start.values.size(), "linear_comparator: dimension mismatch");
    const int d = start.d, k = start.k, nl = d * k;
    Mat L = p == q ? gauge_normalize(start, p).L() : pull_into_box(start.L(), p, q);
    Mat S = p == q ? gauge_normalize(start, p).S() : start.S();
    S *= 0.9;
    const bool move_l = p < q;
    detail::JointLayout lay{d, k, std::vector<int>(observed.begin(), observed.end())};
    const int off = move_l ? 0 : nl;
    const int n = lay.size() - off;
    Vec x0(n), gx(n);
    if (move_l) {
      x0.head(nl) = vec(L);
      gx.head(nl) = g.head(nl);
    }
    for (std::size_t i = 0; i < lay.tasks.size(); ++i) {
      x0.segment(lay.s_at(i) - off, k) = S.col(lay.tasks[i]);
      gx.segment(lay.s_at(i) - off, k) = g.segment(start.s_offset(lay.tasks[i]), k);
    }
    std::vector<BarrierTerm> terms;
    if (move_l) {
      terms.push_back(detail::joint_barrier(lay, cons, p, q, c_max));
    } else {
      for (std::size_t i = 0; i < lay.tasks.size(); ++i) {
        const SafetyConstraint& con = cons[lay.tasks[i]];
        Mat m = Mat::Zero(con.A.rows(), n);
        m.middleCols(lay.s_at(i) - off, k) = -con.A * L;
        for (Eigen::Index r = 0; r < m.rows(); ++r)
          terms.push_back(linear_barrier(m.row(r).transpose(), con.b(r)));
        terms.push_back(soc_barrier(m, con.b, Vec::Zero(n), c_max));
      }
    }
    bool interior = true;
    for (const BarrierTerm& b : terms) interior = interior && b.value(x0).has_value();
    if (!interior) continue;
    SmoothObjective f;
    f.value = [&](const Vec& x) { return gx.dot(x); };
    f.grad = [&](const Vec&) -> Vec { return gx; };
    f.hess = [n](const Vec&) -> Mat { return Mat::Zero(n, n); };
    BarrierOptions opt;
    opt.t0 = 1.0 / std::max(1e-12, gx.norm());
    opt.gap_tol = 1e-9 * std::max(1.0, gx.norm());
    opt.mu = 20.0;
    opt.max_newton = 60;
    const BarrierResult br = barrier_minimize(f, terms, x0, opt);
    if (move_l) L = unvec(br.x.head(nl), d, k);
    for (std::size_t i = 0; i < lay.tasks.size(); ++i)
      S.col(lay.tasks[i]) = br.x.segment(lay.s_at(i) - off, k);
    const ThetaVector u = ThetaVector::from(L, S, true);
    const double v = g.dot(u.values);
    if (v < best.value) {
      best.theta = u;
      best.value = v;
      best.converged = br.converged;
    }
  }
  if (!std::isfinite(best.value))
    throw InfeasibleError(-1, "linear_comparator: no start is strictly inside the safe set");
  return best;
}

// Regret of the affine models f_j^T [theta; 1] taken at the learner's points:
// realized f_j^T [theta_j; 1] = l_j(theta_j) against f_j^T [u; 1].
inline std::vector<RegretRecord> linearized_regret(const std::vector<LinearizedLoss>& lins,
                                                   const std::vector<int>& task_ids,
                                                   const ThetaVector& u) {
  std::vector<double> realized, comparator;
  for (const LinearizedLoss& f : lins) {
    realized.push_back(f.value(f.anchor));
    comparator.push_back(f.value(u));
  }
  return empirical_regret(realized, comparator, task_ids);
}

// Minimizes the summed linearized losses over the safe set.
inline LinearComparatorResult linearized_comparator(
    const std::vector<LinearizedLoss>& lins, const std::vector<SafetyConstraint>& cons,
    const std::set<int>& observed, double p, double q, double c_max,
    const std::vector<ThetaVector>& starts) {
  require(!lins.empty(), "linearized_comparator: no rounds");
  const auto n = lins.front().anchor.values.size();
  Vec g = Vec::Zero(n);
  for (const LinearizedLoss& f : lins) g += f.fhat.head(n);
  return linear_comparator(g, cons, observed, p, q, c_max, starts);
}

struct BoundConstants {
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double gamma3 = 0.0;
  double gamma5 = 0.0;
  double delta = 0.0;
  double lemma4_rhs = 0.0;  // gamma1 (1 + gamma2) + delta
  // Ingredients.
  double u_max = 0.0;
  double phi_max = 0.0;
  double n = 0.0;
  double sigma = 0.0;
  int d = 0;
  double p = 0.0;
  double q = 0.0;
  double c_max = 0.0;
  int tasks_seen = 0;
  ConstraintNorms norms;
};

// Evaluates the bound constants for a round from the batch ingredients and
// the constraints of the tasks observed before it.
inline BoundConstants bound_constants(const BatchStats& st,
                                      const std::vector<const SafetyConstraint*>& seen,
                                      int d, double p, double q, double c_max,
                                      double delta) {
  require(p > 0 && q >= p && d >= 1 && st.n > 0 && st.sigma > 0,
          "bound_constants: invalid ingredients");
  BoundConstants b;
  b.u_max = st.u_max;
  b.phi_max = st.phi_max;
  b.n = st.n;
  b.sigma = st.sigma;
  b.d = d;
  b.p = p;
  b.q = q;
  b.c_max = c_max;
  b.tasks_seen = static_cast<int>(seen.size());
  b.delta = delta;
  b.norms = constraint_norms(seen, c_max);
  const double dd = d;
  b.gamma1 = 1.0 / (st.n * st.sigma * st.sigma) *
             (st.u_max + b.norms.a1 * st.phi_max) * st.phi_max *
             (dd / p * std::sqrt(2.0 * q) * std::sqrt(b.norms.a2) + std::sqrt(q * dd));
  b.gamma2 = std::sqrt(q * dd) +
             std::sqrt(static_cast<double>(b.tasks_seen)) *
                 std::sqrt(1.0 + b.norms.a3 / (p * p));
  b.gamma3 = 4.0 * b.gamma1 * b.gamma1 + 2.0 * delta * delta;
  b.gamma5 = 8.0 * dd / (p * p) * q * b.gamma1 * b.gamma1 * b.norms.a3;
  b.lemma4_rhs = b.gamma1 * (1.0 + b.gamma2) + delta;
  return b;
}

struct SublinearVerdict {
  bool pass = false;
  double exponent = 0.0;       // slope of log regret against log R
  double sqrt_ratio_spread = 0.0;  // max / min of regret / sqrt(R)
  bool linear_ratio_decreasing = false;
  bool clamped = false;        // some regret values were negative
  std::vector<double> per_sqrt;
  std::vector<double> per_round;
  std::string report;
};

inline SublinearVerdict check_sublinear(const std::vector<std::pair<int, double>>& curve,
                                        double tolerance_factor) {
  require(curve.size() >= 3, "check_sublinear: need at least 3 sweep points");
  require(tolerance_factor >= 1.0, "check_sublinear: tolerance_factor must be >= 1");
  for (std::size_t i = 1; i < curve.size(); ++i)
    require(curve[i].first > curve[i - 1].first && curve[0].first >= 1,
            "check_sublinear: rounds must be positive and increasing");
  SublinearVerdict v;
  std::vector<double> lx, ly;
  for (const auto& [r, reg] : curve) {
    double g = reg;
    if (g < 0.0) {
      g = 0.0;
      v.clamped = true;
    }
    v.per_sqrt.push_back(g / std::sqrt(static_cast<double>(r)));
    v.per_round.push_back(g / static_cast<double>(r));
    lx.push_back(std::log(static_cast<double>(r)));
    ly.push_back(std::log(std::max(g, 1e-300)));
  }
  const auto [mn, mx] = std::minmax_element(v.per_sqrt.begin(), v.per_sqrt.end());
  v.sqrt_ratio_spread = *mn > 0.0 ? *mx / *mn : std::numeric_limits<double>::infinity();
  v.linear_ratio_decreasing = true;
  for (std::size_t i = 1; i < v.per_round.size(); ++i)
    if (!(v.per_round[i] < v.per_round[i - 1])) v.linear_ratio_decreasing = false;
  const double n = static_cast<double>(lx.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sx += lx[i];
    sy += ly[i];
    sxx += lx[i] * lx[i];
    sxy += lx[i] * ly[i];
  }
  v.exponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  v.pass = v.sqrt_ratio_spread <= tolerance_factor && v.linear_ratio_decreasing;
  std::ostringstream os;
  os << "spread(regret/sqrt(R))=" << v.sqrt_ratio_spread
     << " regret/R decreasing=" << (v.linear_ratio_decreasing ? "yes" : "no")
     << " exponent=" << v.exponent << (v.clamped ? " (negative values clamped)" : "");
  v.report = os.str();
  return v;
}

}  // namespace safepg

#endif  // SAFEPG_REGRET_HPP_
