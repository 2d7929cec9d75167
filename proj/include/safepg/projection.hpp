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

// Projection of an unconstrained (L~, S~) onto the safe set
//
//   K = { (L, S) : p I <= L^T L <= q I,
//                  for every observed t: c_t = b_t - A_t L s_t >= 0,
//                                        ||c_t|| <= c_max }
//
// under the Bregman divergence of Omega_0, mu2 ||L - L~||^2 + mu1 ||S - S~||^2.
// L is found through a semidefinite program in X = L^T L, the coefficients
// through one second-order cone program per task, and the pair is then
// polished by a joint barrier method started from that point.

#ifndef SAFEPG_PROJECTION_HPP_
#define SAFEPG_PROJECTION_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "safepg/barrier.hpp"
#include "safepg/constraint.hpp"
#include "safepg/errors.hpp"
#include "safepg/lifelong.hpp"
#include "safepg/linalg.hpp"

namespace safepg {

inline double bregman_divergence(double mu1, double mu2, const ThetaVector& theta,
                                 const ThetaVector& anchor) {
  require(theta.values.size() == anchor.values.size() && theta.d == anchor.d &&
              theta.k == anchor.k,
          "bregman_divergence: dimension mismatch");
  const int nl = theta.d * theta.k;
  const Vec dl = theta.values.head(nl) - anchor.values.head(nl);
  const Vec ds = theta.values.tail(theta.values.size() - nl) -
                 anchor.values.tail(anchor.values.size() - nl);
  return mu2 * dl.squaredNorm() + mu1 * ds.squaredNorm();
}

struct FeasibilityReport {
  std::vector<double> task_violation;  // max_i (A L s - b)_i per task
  double lambda_min = 0.0;             // of L^T L
  double lambda_max = 0.0;
  double spectral_low = 0.0;   // lambda_min - p
  double spectral_high = 0.0;  // q - lambda_max
  std::vector<int> violating_tasks;
  bool feasible = true;
};

inline FeasibilityReport check_feasible(const ThetaVector& theta,
                                        const std::vector<SafetyConstraint>& constraints,
                                        double p, double q, double tol = 1e-6) {
  require(static_cast<int>(constraints.size()) == theta.num_tasks,
          "check_feasible: one constraint per task");
  FeasibilityReport rep;
  const Mat L = theta.L();
  const Mat S = theta.S();
  const EigenRange er = eigen_range(L.transpose() * L);
  rep.lambda_min = er.min;
  rep.lambda_max = er.max;
  rep.spectral_low = er.min - p;
  rep.spectral_high = q - er.max;
  rep.feasible = rep.spectral_low >= -tol && rep.spectral_high >= -tol;
  for (int t = 0; t < theta.num_tasks; ++t) {
    const double v = constraints[t].max_violation(L * S.col(t));
    rep.task_violation.push_back(v);
    if (v > tol) {
      rep.violating_tasks.push_back(t);
      rep.feasible = false;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Semidefinite program in X = L^T L.

// One equality s^T X s = beta.
struct SdpEquality {
  Vec s;
  double beta = 0.0;
  int task_id = -1;
};

struct SpectralBox {
  Mat X;
  double p = 0.0;
  double q = 0.0;
  double objective = 0.0;
  bool certificate = false;  // X~ = L~^T L~ was feasible and returned as is
};

// mu2 (tau - 2 ||L~||_F sqrt(tau)) with tau = tr X.
inline double sdp_objective(double mu2, double norm_l_tilde, const Mat& x) {
  const double tau = x.trace();
  return mu2 * (tau - 2.0 * norm_l_tilde * std::sqrt(std::max(tau, 0.0)));
}

namespace detail {

// Frobenius-orthonormal basis of k x k symmetric matrices.
inline std::vector<Mat> symmetric_basis(int k) {
  std::vector<Mat> out;
  for (int a = 0; a < k; ++a) {
    for (int b = a; b < k; ++b) {
      Mat e = Mat::Zero(k, k);
      if (a == b) {
        e(a, a) = 1.0;
      } else {
        e(a, b) = e(b, a) = 1.0 / std::sqrt(2.0);
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

// -log det(B0 + sum x_i B_i).
inline BarrierTerm logdet_barrier(Mat b0, std::vector<Mat> bs) {
  auto build = [b0, bs](const Vec& x) {
    Mat m = b0;
    for (std::size_t i = 0; i < bs.size(); ++i) m += x(i) * bs[i];
    return symmetrize(m);
  };
  BarrierTerm t;
  t.value = [build](const Vec& x) -> std::optional<double> {
    Eigen::LLT<Mat> llt(build(x));
    if (llt.info() != Eigen::Success) return std::nullopt;
    const Mat& l = llt.matrixL();
    return -2.0 * l.diagonal().array().log().sum();
  };
  t.grad = [build, bs](const Vec& x) -> Vec {
    const Mat inv = build(x).inverse();
    Vec g(bs.size());
    for (std::size_t i = 0; i < bs.size(); ++i) g(i) = -(inv * bs[i]).trace();
    return g;
  };
  t.hess = [build, bs](const Vec& x) -> Mat {
    const Mat inv = build(x).inverse();
    std::vector<Mat> w;
    for (const Mat& b : bs) w.push_back(inv * b);
    Mat h(bs.size(), bs.size());
    for (std::size_t i = 0; i < bs.size(); ++i)
      for (std::size_t j = i; j < bs.size(); ++j)
        h(i, j) = h(j, i) = (w[i] * w[j]).trace();
    return h;
  };
  t.degree = static_cast<double>(b0.rows());
  return t;
}

inline bool in_open_box(const Mat& x, double p, double q) {
  const EigenRange er = eigen_range(x);
  return er.min > p && er.max < q;
}

}  // namespace detail

// Closest X (Frobenius) to x_tilde with eigenvalues in [p, q] and trace tau:
// shift-and-clamp of the spectrum, with the shift found by bisection.
inline Mat spectral_trace_projection(const Mat& x_tilde, double p, double q,
                                     double tau) {
  const int k = static_cast<int>(x_tilde.rows());
  require(tau >= k * p - 1e-12 && tau <= k * q + 1e-12,
          "spectral_trace_projection: trace outside [kp, kq]");
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(x_tilde));
  const Vec lam = es.eigenvalues();
  auto total = [&](double nu) {
    return (lam.array() + nu).cwiseMax(p).cwiseMin(q).sum();
  };
  double lo = p - lam.maxCoeff() - 1.0;
  double hi = q - lam.minCoeff() + 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (total(mid) < tau ? lo : hi) = mid;
  }
  const Vec ev = (lam.array() + 0.5 * (lo + hi)).cwiseMax(p).cwiseMin(q);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// minimize mu2 (tr X - 2 ||L~|| sqrt(tr X))
// subject to s_t^T X s_t = beta_t and p I <= X <= q I.
inline SpectralBox solve_sdp_L(const std::vector<SdpEquality>& eqs, double p,
                               double q, double mu2, const Mat& l_tilde) {
  require(p > 0 && p <= q, "solve_sdp_L: need 0 < p <= q");
  require(mu2 > 0, "solve_sdp_L: mu2 must be > 0");
  const int k = static_cast<int>(l_tilde.cols());
  const double a = l_tilde.norm();
  SpectralBox out;
  out.p = p;
  out.q = q;
  for (const SdpEquality& e : eqs) {
    require(e.s.size() == k && e.s.allFinite() && std::isfinite(e.beta),
            "solve_sdp_L: malformed equality");
    const double ss = e.s.squaredNorm();
    const double slack = 1e-9 * std::max(1.0, e.beta);
    if (e.beta < p * ss - slack || e.beta > q * ss + slack)
      throw InfeasibleError(e.task_id, "solve_sdp_L: s^T X s = beta unreachable "
                                       "inside the spectral box");
  }
  auto finish = [&](Mat x) {
    out.X = symmetrize(x);
    out.objective = sdp_objective(mu2, a, out.X);
    return out;
  };

  if (p == q) {
    for (const SdpEquality& e : eqs)
      if (std::abs(e.beta - p * e.s.squaredNorm()) > 1e-9 * std::max(1.0, e.beta))
        throw InfeasibleError(e.task_id, "solve_sdp_L: X = pI violates the equality");
    return finish(p * Mat::Identity(k, k));
  }

  const Mat x_tilde = l_tilde.transpose() * l_tilde;
  if (eqs.empty()) {
    const double tau = std::clamp(a * a, k * p, k * q);
    return finish(spectral_trace_projection(x_tilde, p, q, tau));
  }
  {
    bool ok = detail::in_open_box(x_tilde, p, q);
    for (const SdpEquality& e : eqs)
      ok = ok && std::abs(e.s.dot(x_tilde * e.s) - e.beta) <=
                     1e-12 * std::max(1.0, e.beta);
    if (ok) {
      out.certificate = true;
      return finish(x_tilde);
    }
  }

  // Eliminate the equalities: z = z_p + N w in the symmetric basis.
  const std::vector<Mat> basis = detail::symmetric_basis(k);
  const int nb = static_cast<int>(basis.size());
  const int m = static_cast<int>(eqs.size());
  Mat aeq(m, nb);
  Vec rhs(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < nb; ++j) aeq(i, j) = eqs[i].s.dot(basis[j] * eqs[i].s);
    rhs(i) = eqs[i].beta;
  }
  Eigen::JacobiSVD<Mat> svd(aeq, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec& sv = svd.singularValues();
  const double cut = 1e-10 * (sv.size() ? sv(0) : 0.0);
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cut) ++rank;
  Vec zp = Vec::Zero(nb);
  for (int i = 0; i < rank; ++i)
    zp += svd.matrixV().col(i) * (svd.matrixU().col(i).dot(rhs) / sv(i));
  if ((aeq * zp - rhs).norm() > 1e-9 * std::max(1.0, rhs.norm())) {
    int worst = 0;
    const Vec res = (aeq * zp - rhs).cwiseAbs();
    res.maxCoeff(&worst);
    throw InfeasibleError(eqs[worst].task_id,
                          "solve_sdp_L: inconsistent equalities");
  }
  Mat xp = Mat::Zero(k, k);
  for (int j = 0; j < nb; ++j) xp += zp(j) * basis[j];
  const int nn = nb - rank;
  std::vector<Mat> dirs;
  for (int c = rank; c < nb; ++c) {
    Mat dm = Mat::Zero(k, k);
    for (int j = 0; j < nb; ++j) dm += svd.matrixV()(j, c) * basis[j];
    dirs.push_back(symmetrize(dm));
  }
  const Mat id = Mat::Identity(k, k);

  if (nn == 0) {
    const EigenRange er = eigen_range(xp);
    const double tol = 1e-9 * std::max(1.0, q);
    if (er.min < p - tol || er.max > q + tol)
      throw InfeasibleError(eqs.front().task_id,
                            "solve_sdp_L: the equalities fix X outside the spectral box");
    return finish(xp);
  }

  // Phase I over (w, s): X - (p - s) I > 0 and (q + s) I - X > 0, minimize s.
  Vec w = Vec::Zero(nn);
  {
    const EigenRange er = eigen_range(xp);
    const double s0 = std::max({er.max - q, p - er.min, 0.0}) + 1.0;
    std::vector<Mat> lo_dirs = dirs, hi_dirs;
    lo_dirs.push_back(id);
    for (const Mat& dm : dirs) hi_dirs.push_back(-dm);
    hi_dirs.push_back(id);
    std::vector<BarrierTerm> terms = {
        detail::logdet_barrier(xp - p * id, lo_dirs),
        detail::logdet_barrier(q * id - xp, hi_dirs)};
    SmoothObjective f;
    f.value = [nn](const Vec& x) { return x(nn); };
    f.grad = [nn](const Vec& x) {
      Vec g = Vec::Zero(x.size());
      g(nn) = 1.0;
      return g;
    };
    f.hess = [](const Vec& x) { return Mat::Zero(x.size(), x.size()); };
    Vec x0 = Vec::Zero(nn + 1);
    x0(nn) = s0;
    BarrierOptions opt;
    opt.gap_tol = 1e-12 * std::max(1.0, q);
    const double target = -0.25 * (q - p);
    opt.stop_when = [nn, target](const Vec& x) { return x(nn) <= target; };
    const BarrierResult ph1 = barrier_minimize(f, terms, x0, opt);
    w = ph1.x.head(nn);
    if (ph1.x(nn) >= 0.0) {
      if (ph1.x(nn) > 1e-8 * std::max(1.0, q))
        throw InfeasibleError(eqs.front().task_id,
                              "solve_sdp_L: no X satisfies the equalities inside the box");
      // The feasible set has no interior; its phase I point is the answer.
      Mat x = xp;
      for (int j = 0; j < nn; ++j) x += w(j) * dirs[j];
      return finish(x);
    }
  }

  // Phase II: minimize the trace objective, scaled by 1 / mu2.
  Vec trd(nn);
  for (int j = 0; j < nn; ++j) trd(j) = dirs[j].trace();
  const double tau_p = xp.trace();
  SmoothObjective f;
  f.value = [=](const Vec& x) {
    const double tau = tau_p + trd.dot(x);
    return tau - 2.0 * a * std::sqrt(std::max(tau, 0.0));
  };
  f.grad = [=](const Vec& x) -> Vec {
    const double tau = std::max(tau_p + trd.dot(x), 1e-300);
    return (1.0 - a / std::sqrt(tau)) * trd;
  };
  f.hess = [=](const Vec& x) -> Mat {
    const double tau = std::max(tau_p + trd.dot(x), 1e-300);
    return (a / (2.0 * tau * std::sqrt(tau))) * trd * trd.transpose();
  };
  std::vector<Mat> neg;
  for (const Mat& dm : dirs) neg.push_back(-dm);
  std::vector<BarrierTerm> terms = {detail::logdet_barrier(xp - p * id, dirs),
                                    detail::logdet_barrier(q * id - xp, neg)};
  BarrierOptions opt;
  opt.gap_tol = 1e-11 * std::max(1.0, k * q);
  const BarrierResult ph2 = barrier_minimize(f, terms, w, opt);
  Mat x = xp;
  for (int j = 0; j < nn; ++j) x += ph2.x(j) * dirs[j];
  return finish(x);
}

// L = Q X^{1/2}, Q the orthonormal polar factor of L_prev.
inline Mat recover_L_from_X(const Mat& x, const Mat& l_prev) {
  require(x.rows() == x.cols() && x.rows() == l_prev.cols(),
          "recover_L_from_X: dimension mismatch");
  require(eigen_range(x).min >= -1e-10, "recover_L_from_X: X is not PSD");
  return polar_factor(l_prev) * sqrt_psd(x);
}

// ---------------------------------------------------------------------------
// Per-task second-order cone programs.

struct TaskSocpResult {
  Vec s;
  Vec c;
  bool shortcut = false;  // s~ was already strictly feasible
};

inline bool strictly_inside(const Vec& r, double c_max) {
  return r.minCoeff() > 0.0 && r.norm() < c_max;
}

// minimize mu1 ||s - s~||^2  s.t.  r = b - M s >= 0, ||r|| <= c_max,  M = A L.
// The slack is c = r at the solution; the method is interior-point, so c > 0.
inline TaskSocpResult solve_task_socp(const Mat& m, const Vec& b, double mu1,
                                      double c_max, const Vec& s_tilde,
                                      int task_id) {
  require(mu1 > 0 && c_max > 0, "solve_task_socp: mu1 and c_max must be > 0");
  require(m.rows() == b.size() && m.cols() == s_tilde.size(),
          "solve_task_socp: dimension mismatch");
  const int k = static_cast<int>(m.cols());
  const int d = static_cast<int>(m.rows());
  TaskSocpResult out;
  if (strictly_inside(b - m * s_tilde, c_max)) {
    out.s = s_tilde;
    out.c = b - m * s_tilde;
    out.shortcut = true;
    return out;
  }
  Vec start;
  if (strictly_inside(b, c_max)) {
    start = Vec::Zero(k);
  } else {
    // Phase I over (s, u): r + u > 0, ||r|| < c_max + u, minimize u.
    const Vec r0 = b - m * s_tilde;
    const double u0 =
        std::max({(-r0).maxCoeff(), r0.norm() - c_max, 0.0}) + 1.0;
    std::vector<BarrierTerm> terms;
    for (int i = 0; i < d; ++i) {
      Vec a(k + 1);
      a << -m.row(i).transpose(), 1.0;
      terms.push_back(linear_barrier(a, b(i)));
    }
    Mat my = Mat::Zero(d, k + 1);
    my.leftCols(k) = -m;
    Vec ts = Vec::Zero(k + 1);
    ts(k) = 1.0;
    terms.push_back(soc_barrier(my, b, ts, c_max));
    SmoothObjective f;
    f.value = [k](const Vec& x) { return x(k); };
    f.grad = [k](const Vec& x) {
      Vec g = Vec::Zero(x.size());
      g(k) = 1.0;
      return g;
    };
    f.hess = [](const Vec& x) { return Mat::Zero(x.size(), x.size()); };
    Vec x0(k + 1);
    x0 << s_tilde, u0;
    BarrierOptions opt;
    opt.gap_tol = 1e-13 * c_max;
    const double target = -0.1 * c_max;
    opt.stop_when = [k, target](const Vec& x) { return x(k) <= target; };
    const BarrierResult ph1 = barrier_minimize(f, terms, x0, opt);
    start = ph1.x.head(k);
    if (!strictly_inside(b - m * start, c_max))
      throw InfeasibleError(task_id, "solve_task_socp: safety constraint cannot be "
                                         "met with ||c|| <= c_max");
  }
  std::vector<BarrierTerm> terms;
  for (int i = 0; i < d; ++i) terms.push_back(linear_barrier(-m.row(i).transpose(), b(i)));
  terms.push_back(soc_barrier(-m, b, Vec::Zero(k), c_max));
  SmoothObjective f;
  f.value = [s_tilde](const Vec& s) { return (s - s_tilde).squaredNorm(); };
  f.grad = [s_tilde](const Vec& s) -> Vec { return 2.0 * (s - s_tilde); };
  f.hess = [k](const Vec&) -> Mat { return 2.0 * Mat::Identity(k, k); };
  BarrierOptions opt;
  opt.gap_tol = 1e-12 * std::max(1.0, (start - s_tilde).squaredNorm());
  const BarrierResult res = barrier_minimize(f, terms, start, opt);
  out.s = res.x;
  out.c = b - m * res.x;
  return out;
}

struct SocpSolution {
  Mat S;
  std::vector<Vec> slacks;  // empty for unobserved tasks
};

inline SocpSolution solve_socp_S(const Mat& L,
                                 const std::vector<SafetyConstraint>& constraints,
                                 const std::set<int>& observed, double mu1,
                                 double c_max, const Mat& s_tilde) {
  require(static_cast<int>(constraints.size()) == s_tilde.cols(),
          "solve_socp_S: one constraint per task");
  SocpSolution out;
  out.S = s_tilde;
  out.slacks.resize(constraints.size());
  for (int t : observed) {
    const SafetyConstraint& con = constraints[t];
    const TaskSocpResult r =
        solve_task_socp(con.A * L, con.b, mu1, c_max, s_tilde.col(t), t);
    out.S.col(t) = r.s;
    out.slacks[t] = r.c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Joint refinement over (L, s_t for observed t).

namespace detail {

struct JointLayout {
  int d = 0;
  int k = 0;
  std::vector<int> tasks;
  int size() const { return d * k + k * static_cast<int>(tasks.size()); }
  int s_at(std::size_t i) const { return d * k + k * static_cast<int>(i); }
};

// Barrier of K in the joint variables, with analytic derivatives.
inline BarrierTerm joint_barrier(const JointLayout& lay,
                                 const std::vector<SafetyConstraint>& cons,
                                 double p, double q, double c_max) {
  const int d = lay.d;
  const int k = lay.k;
  const int nl = d * k;
  auto unpack_l = [d, k](const Vec& x) { return unvec(x.head(d * k), d, k); };
  const Mat id = Mat::Identity(k, k);

  BarrierTerm t;
  t.degree = 2.0 * k;
  for (std::size_t i = 0; i < lay.tasks.size(); ++i) t.degree += d + 2.0;

  t.value = [=](const Vec& x) -> std::optional<double> {
    const Mat L = unpack_l(x);
    const Mat g = L.transpose() * L;
    Eigen::LLT<Mat> lo(g - p * id), hi(q * id - g);
    if (lo.info() != Eigen::Success || hi.info() != Eigen::Success) return std::nullopt;
    const Mat& l1 = lo.matrixL();
    const Mat& l2 = hi.matrixL();
    double v = -2.0 * l1.diagonal().array().log().sum() -
               2.0 * l2.diagonal().array().log().sum();
    for (std::size_t i = 0; i < lay.tasks.size(); ++i) {
      const SafetyConstraint& con = cons[lay.tasks[i]];
      const Vec r = con.b - con.A * L * x.segment(lay.s_at(i), k);
      const double gap = c_max * c_max - r.squaredNorm();
      if (!(r.minCoeff() > 0.0) || !(gap > 0.0)) return std::nullopt;
      v -= r.array().log().sum() + std::log(gap);
    }
    if (!std::isfinite(v)) return std::nullopt;
    return v;
  };

  // Jacobian of r = b - A L s in (vec L, s): [-(s^T kron A), -A L].
  auto jacobian = [=](const Mat& a, const Mat& L, const Vec& s) {
    Mat j(a.rows(), nl + k);
    j << -kron(s.transpose(), a), -(a * L);
    return j;
  };

  t.grad = [=](const Vec& x) -> Vec {
    const Mat L = unpack_l(x);
    const Mat g = L.transpose() * L;
    Vec out = Vec::Zero(x.size());
    out.head(nl) = vec(-2.0 * L * (g - p * id).inverse() +
                       2.0 * L * (q * id - g).inverse());
    for (std::size_t i = 0; i < lay.tasks.size(); ++i) {
      const SafetyConstraint& con = cons[lay.tasks[i]];
      const Vec s = x.segment(lay.s_at(i), k);
      const Vec r = con.b - con.A * L * s;
      const double gap = c_max * c_max - r.squaredNorm();
      const Vec w = -r.cwiseInverse() + (2.0 / gap) * r;
      const Vec acc = jacobian(con.A, L, s).transpose() * w;
      out.head(nl) += acc.head(nl);
      out.segment(lay.s_at(i), k) += acc.tail(k);
    }
    return out;
  };

  t.hess = [=](const Vec& x) -> Mat {
    const Mat L = unpack_l(x);
    const Mat g = L.transpose() * L;
    const Mat yi = (g - p * id).inverse();
    const Mat zi = (q * id - g).inverse();
    Mat h = Mat::Zero(x.size(), x.size());
    // Spectral terms: directions E_a = unit matrix at (row, col) of L.
    std::vector<Mat> dy(nl);
    for (int a = 0; a < nl; ++a) {
      const int row = a % d, col = a / d;
      Mat e = Mat::Zero(d, k);
      e(row, col) = 1.0;
      dy[a] = e.transpose() * L + L.transpose() * e;
    }
    for (int a = 0; a < nl; ++a) {
      const Mat ya = yi * dy[a];
      const Mat za = zi * dy[a];
      for (int b = a; b < nl; ++b) {
        double v = (ya * (yi * dy[b])).trace() + (za * (zi * dy[b])).trace();
        // Second-order part: E_a^T E_b + E_b^T E_a is nonzero only on equal rows.
        if (a % d == b % d) {
          Mat e2 = Mat::Zero(k, k);
          e2(a / d, b / d) += 1.0;
          e2(b / d, a / d) += 1.0;
          v += -(yi * e2).trace() + (zi * e2).trace();
        }
        h(a, b) = h(b, a) = v;
      }
    }
    for (std::size_t i = 0; i < lay.tasks.size(); ++i) {
      const SafetyConstraint& con = cons[lay.tasks[i]];
      const int off = lay.s_at(i);
      const Vec s = x.segment(off, k);
      const Vec r = con.b - con.A * L * s;
      const double gap = c_max * c_max - r.squaredNorm();
      const Mat j = jacobian(con.A, L, s);
      const Vec w = -r.cwiseInverse() + (2.0 / gap) * r;
      const Vec dg = (r.cwiseInverse().cwiseAbs2().array() + 2.0 / gap).matrix();
      Mat hb = j.transpose() * dg.asDiagonal() * j;
      // Second derivatives of r are bilinear in (L, s): sum_j w_j d2r_j.
      const Mat cross = -kron(id, con.A.transpose() * w);
      hb.topRightCorner(nl, k) += cross;
      hb.bottomLeftCorner(k, nl) += cross.transpose();
      const Vec dgap = -2.0 * j.transpose() * r;
      hb += dgap * dgap.transpose() / (gap * gap);
      h.topLeftCorner(nl, nl) += hb.topLeftCorner(nl, nl);
      h.block(0, off, nl, k) += hb.topRightCorner(nl, k);
      h.block(off, 0, k, nl) += hb.bottomLeftCorner(k, nl);
      h.block(off, off, k, k) += hb.bottomRightCorner(k, k);
    }
    return symmetrize(h);
  };
  return t;
}

}  // namespace detail

struct ProjectionParams {
  double mu1 = 0.1;
  double mu2 = 0.1;
  double p = 0.5;
  double q = 2.0;
  double c_max = 1.0;
};

struct ProjectionResult {
  ThetaVector theta;
  std::vector<Vec> slacks;  // per task; empty when unobserved
  double divergence = 0.0;
  bool identity = false;                // theta~ was already inside K
  bool sdp_equalities_relaxed = false;  // SDP fell back to the box alone
  bool used_anchor_L = false;
  bool refined = false;
};

// True when (L, S) is inside K with every inequality strict.
inline bool strictly_in_K(const Mat& L, const Mat& S,
                          const std::vector<SafetyConstraint>& cons,
                          const std::set<int>& observed, double p, double q,
                          double c_max) {
  const EigenRange er = eigen_range(L.transpose() * L);
  const bool box = p == q ? std::abs(er.min - p) <= 1e-12 && std::abs(er.max - q) <= 1e-12
                          : er.min > p && er.max < q;
  if (!box) return false;
  for (int t : observed)
    if (!strictly_inside(cons[t].b - cons[t].A * L * S.col(t), c_max)) return false;
  return true;
}

// Singular values of L moved into [sqrt(p + e), sqrt(q - e)], e a tiny margin.
inline Mat pull_into_box(const Mat& L, double p, double q) {
  Eigen::JacobiSVD<Mat> svd(L, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double e = p == q ? 0.0 : 1e-7 * (q - p);
  Vec sv = svd.singularValues();
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    sv(i) = std::sqrt(std::clamp(sv(i) * sv(i), p + e, q - e));
  return svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
}

inline ProjectionResult project_constrained(
    const ThetaVector& theta_tilde, const std::vector<SafetyConstraint>& constraints,
    const std::set<int>& observed, const ProjectionParams& prm,
    const ThetaVector& anchor_prev) {
  require(static_cast<int>(constraints.size()) == theta_tilde.num_tasks,
          "project_constrained: one constraint per task");
  require(prm.p > 0 && prm.p <= prm.q && prm.c_max > 0 && prm.mu1 > 0 && prm.mu2 > 0,
          "project_constrained: invalid parameters");
  for (int t : observed)
    require(t >= 0 && t < theta_tilde.num_tasks, "project_constrained: bad task id");
  const int d = theta_tilde.d;
  const int k = theta_tilde.k;
  const Mat lt = theta_tilde.L();
  const Mat st = theta_tilde.S();

  ProjectionResult res;
  auto slacks_of = [&](const Mat& L, const Mat& S) {
    std::vector<Vec> out(constraints.size());
    for (int t : observed) out[t] = constraints[t].b - constraints[t].A * L * S.col(t);
    return out;
  };
  if (strictly_in_K(lt, st, constraints, observed, prm.p, prm.q, prm.c_max)) {
    res.theta = theta_tilde;
    res.theta.constrained = true;
    res.slacks = slacks_of(lt, st);
    res.identity = true;
    return res;
  }

  // SDP equalities from the unconstrained coefficients.
  std::vector<SdpEquality> eqs;
  for (int t : observed) {
    const Vec s = st.col(t);
    if (s.squaredNorm() <= 1e-24) continue;
    const SafetyConstraint& con = constraints[t];
    const Vec c = project_slack(con.b - con.A * lt * s, prm.c_max);
    const Vec a = con.pinv().pinv * (con.b - c);
    eqs.push_back({s, a.squaredNorm(), t});
  }
  SpectralBox box;
  try {
    box = solve_sdp_L(eqs, prm.p, prm.q, prm.mu2, lt);
  } catch (const InfeasibleError&) {
    box = solve_sdp_L({}, prm.p, prm.q, prm.mu2, lt);
    res.sdp_equalities_relaxed = true;
  }
  Mat x = box.X;
  if (prm.p < prm.q) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(x));
    const double e = 1e-7 * (prm.q - prm.p);
    const Vec ev = es.eigenvalues().cwiseMax(prm.p + e).cwiseMin(prm.q - e);
    x = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  }
  const Mat anchor_l = pull_into_box(anchor_prev.L(), prm.p, prm.q);
  Eigen::JacobiSVD<Mat> lsvd(lt);
  const bool lt_full_rank =
      lsvd.singularValues().size() == k &&
      lsvd.singularValues()(k - 1) > 1e-12 * std::max(1.0, lsvd.singularValues()(0));
  const Mat l_sdp = recover_L_from_X(x, lt_full_rank ? lt : anchor_l);

  auto divergence = [&](const Mat& L, const Mat& S) {
    return prm.mu2 * (L - lt).squaredNorm() + prm.mu1 * (S - st).squaredNorm();
  };

  struct Candidate {
    Mat L;
    Mat S;
    bool anchor = false;
  };
  std::vector<Candidate> cands;
  std::optional<InfeasibleError> last_error;
  for (const auto& [L, is_anchor] : {std::pair<Mat, bool>{l_sdp, false},
                                     std::pair<Mat, bool>{anchor_l, true}}) {
    try {
      SocpSolution sol = solve_socp_S(L, constraints, observed, prm.mu1, prm.c_max, st);
      cands.push_back({L, sol.S, is_anchor});
    } catch (const InfeasibleError& e) {
      last_error = e;
    }
  }
  if (cands.empty()) throw *last_error;

  detail::JointLayout lay{d, k, std::vector<int>(observed.begin(), observed.end())};
  const double scale = std::max(prm.mu1, prm.mu2);
  auto pack = [&](const Mat& L, const Mat& S) {
    Vec v(lay.size());
    v.head(d * k) = vec(L);
    for (std::size_t i = 0; i < lay.tasks.size(); ++i)
      v.segment(lay.s_at(i), k) = S.col(lay.tasks[i]);
    return v;
  };
  const Vec target = pack(lt, st);
  Vec wdiag(lay.size());
  wdiag.head(d * k).setConstant(prm.mu2 / scale);
  wdiag.tail(lay.size() - d * k).setConstant(prm.mu1 / scale);

  double best = std::numeric_limits<double>::infinity();
  Candidate chosen;
  bool chosen_refined = false;
  for (const Candidate& c : cands) {
    double dv = divergence(c.L, c.S);
    Candidate cur = c;
    bool refined = false;
    if (prm.p < prm.q) {
      SmoothObjective f;
      f.value = [&](const Vec& v) {
        return (v - target).cwiseProduct(wdiag).dot(v - target);
      };
      f.grad = [&](const Vec& v) -> Vec {
        return 2.0 * (v - target).cwiseProduct(wdiag);
      };
      f.hess = [&](const Vec&) -> Mat { return Mat(wdiag.asDiagonal()) * 2.0; };
      std::vector<BarrierTerm> terms = {
          detail::joint_barrier(lay, constraints, prm.p, prm.q, prm.c_max)};
      const Vec x0 = pack(c.L, c.S);
      if (terms[0].value(x0)) {
        BarrierOptions opt;
        // The candidate is already feasible; start near its duality-gap scale.
        opt.t0 = terms[0].degree / std::max(1e-12, f.value(x0));
        opt.gap_tol = 1e-8 * std::max(1e-3, f.value(x0));
        opt.mu = 20.0;
        opt.max_newton = 40;
        opt.newton_tol = 1e-10;
        const BarrierResult br = barrier_minimize(f, terms, x0, opt);
        Mat L = unvec(br.x.head(d * k), d, k);
        Mat S = c.S;
        for (std::size_t i = 0; i < lay.tasks.size(); ++i)
          S.col(lay.tasks[i]) = br.x.segment(lay.s_at(i), k);
        const double rv = divergence(L, S);
        if (rv < dv && terms[0].value(br.x)) {
          cur.L = L;
          cur.S = S;
          dv = rv;
          refined = true;
        }
      }
    }
    if (dv < best) {
      best = dv;
      chosen = cur;
      chosen_refined = refined;
    }
  }
  res.theta = ThetaVector::from(chosen.L, chosen.S, true);
  res.slacks = slacks_of(chosen.L, chosen.S);
  res.divergence = best;
  res.used_anchor_L = chosen.anchor;
  res.refined = chosen_refined;
  return res;
}

}  // namespace safepg

#endif  // SAFEPG_PROJECTION_HPP_
