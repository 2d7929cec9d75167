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

// Linear-Gaussian policies over state features.
//
// Parameters are stacked per action dimension: alpha = [a_1; ...; a_m] with
// a_i in R^{d_phi}, and the mean of action i is a_i^T phi(x). Equivalently
// mean_i = alpha^T Phi_i(x) with the block feature Phi_i = e_i (x) phi(x).
//
// The negative log-likelihood loss is quadratic in alpha, so batches are
// summarized once into weighted sufficient statistics
//   G = sum w Phi Phi^T,  h = sum w u Phi,  c = sum w u^2
// and every loss, gradient and Fisher evaluation afterwards is O(d^2).

#ifndef SAFEPG_POLICY_HPP_
#define SAFEPG_POLICY_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "safepg/constraint.hpp"
#include "safepg/dynamics.hpp"
#include "safepg/errors.hpp"
#include "safepg/linalg.hpp"

namespace safepg {

struct FeatureMap {
  std::function<Vec(const Vec&)> phi;
  int state_dim = 0;
  int feature_dim = 0;  // d_phi
  // Bound on ||Phi(x)||; 0 means "not declared", checked against data only.
  double phi_max = 0.0;

  Vec operator()(const Vec& x) const {
    require(x.size() == state_dim, "FeatureMap: state dimension mismatch");
    Vec f = phi(x);
    require(f.size() == feature_dim, "FeatureMap: feature dimension mismatch");
    return f;
  }
};

// phi(x) = [x; 1].
inline FeatureMap linear_with_bias(int state_dim) {
  require(state_dim >= 1, "linear_with_bias: state_dim must be >= 1");
  FeatureMap f;
  f.state_dim = state_dim;
  f.feature_dim = state_dim + 1;
  f.phi = [state_dim](const Vec& x) {
    Vec out(state_dim + 1);
    out << x, 1.0;
    return out;
  };
  return f;
}

inline FeatureMap custom_features(int state_dim, int feature_dim,
                                  std::function<Vec(const Vec&)> phi,
                                  double phi_max = 0.0) {
  require(state_dim >= 1 && feature_dim >= 1,
          "custom_features: dimensions must be >= 1");
  return {std::move(phi), state_dim, feature_dim, phi_max};
}

struct GaussianPolicy {
  Vec alpha;
  double sigma = 0.1;
  int action_dim = 1;

  void validate(const FeatureMap& fmap) const {
    require(sigma > 0, "GaussianPolicy: sigma must be > 0");
    require(action_dim >= 1, "GaussianPolicy: action_dim must be >= 1");
    require(alpha.size() == fmap.feature_dim * action_dim,
            "GaussianPolicy: alpha dimension must equal d_phi * action_dim");
    require(alpha.allFinite(), "GaussianPolicy: alpha must be finite");
  }

  Vec mean(const Vec& features) const {
    const auto dphi = features.size();
    Vec m(action_dim);
    for (int i = 0; i < action_dim; ++i)
      m(i) = alpha.segment(i * dphi, dphi).dot(features);
    return m;
  }
};

inline double log_pi(const GaussianPolicy& policy, const Vec& u, const Vec& x,
                     const FeatureMap& fmap) {
  policy.validate(fmap);
  require(u.size() == policy.action_dim, "log_pi: action dimension mismatch");
  const double s2 = policy.sigma * policy.sigma;
  const Vec r = u - policy.mean(fmap(x));
  return -0.5 * policy.action_dim * std::log(2.0 * std::numbers::pi * s2) -
         r.squaredNorm() / (2.0 * s2);
}

// Weighted sufficient statistics of a trajectory batch.
struct BatchStats {
  Mat G;               // d x d
  Vec h;               // d
  double c = 0.0;      // sum w u^2
  double n = 0.0;      // number of trajectories
  double terms = 0.0;  // sum over trajectories of w * M * action_dim
  double sigma = 0.1;
  double phi_max = 0.0;  // observed max ||phi(x)||
  // Observed max ||u||_2; with vector actions this keeps the scalar-action
  // gradient bound valid because ||r (x) phi|| = ||r|| ||phi||.
  double u_max = 0.0;
  int horizon = 0;       // longest trajectory in the batch

  int dim() const { return static_cast<int>(h.size()); }
};

// Per-trajectory likelihood weights w_k = exp(-beta (C_k - C_min) /
// (C_max - C_min)); all ones when beta = 0 or the costs are all equal.
inline std::vector<double> cost_weights(const std::vector<Trajectory>& trajs,
                                        double beta) {
  std::vector<double> w(trajs.size(), 1.0);
  if (beta <= 0.0 || trajs.empty()) return w;
  std::vector<double> cost(trajs.size());
  for (std::size_t k = 0; k < trajs.size(); ++k)
    cost[k] = trajectory_cost(trajs[k]);
  const auto [lo, hi] = std::minmax_element(cost.begin(), cost.end());
  const double span = *hi - *lo;
  if (!(span > 0.0)) return w;
  for (std::size_t k = 0; k < trajs.size(); ++k)
    w[k] = std::exp(-beta * (cost[k] - *lo) / span);
  return w;
}

inline BatchStats summarize(const std::vector<Trajectory>& trajs,
                            const FeatureMap& fmap, double sigma,
                            int action_dim,
                            const std::vector<double>& weights = {}) {
  require(!trajs.empty(), "summarize: empty trajectory batch");
  require(sigma > 0, "summarize: sigma must be > 0");
  require(weights.empty() || weights.size() == trajs.size(),
          "summarize: one weight per trajectory");
  const int dphi = fmap.feature_dim;
  const int d = dphi * action_dim;
  BatchStats st;
  st.G = Mat::Zero(d, d);
  st.h = Vec::Zero(d);
  st.sigma = sigma;
  st.n = static_cast<double>(trajs.size());
  Mat gram = Mat::Zero(dphi, dphi);
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    const Trajectory& tr = trajs[k];
    const double w = weights.empty() ? 1.0 : weights[k];
    require(w >= 0.0, "summarize: weights must be nonnegative");
    require(tr.length() >= 1 && tr.states.size() == tr.actions.size() + 1,
            "summarize: malformed trajectory");
    st.horizon = std::max(st.horizon, tr.length());
    for (int m = 0; m < tr.length(); ++m) {
      const Vec f = fmap(tr.states[m]);
      const Vec& u = tr.actions[m];
      require(u.size() == action_dim, "summarize: action dimension mismatch");
      st.phi_max = std::max(st.phi_max, f.norm());
      st.u_max = std::max(st.u_max, u.norm());
      gram.noalias() += w * f * f.transpose();
      for (int i = 0; i < action_dim; ++i)
        st.h.segment(i * dphi, dphi) += w * u(i) * f;
      st.c += w * u.squaredNorm();
    }
    st.terms += w * tr.length() * action_dim;
  }
  for (int i = 0; i < action_dim; ++i)
    st.G.block(i * dphi, i * dphi, dphi, dphi) = gram;
  if (fmap.phi_max > 0.0)
    require(st.phi_max <= fmap.phi_max * (1.0 + 1e-12),
            "summarize: feature norm exceeds declared phi_max");
  return st;
}

// Merges two batches of the same task and sigma (used for extra data).
inline BatchStats merge(const BatchStats& a, const BatchStats& b) {
  require(a.dim() == b.dim() && a.sigma == b.sigma, "merge: incompatible batches");
  BatchStats out = a;
  out.G += b.G;
  out.h += b.h;
  out.c += b.c;
  out.n += b.n;
  out.terms += b.terms;
  out.phi_max = std::max(a.phi_max, b.phi_max);
  out.u_max = std::max(a.u_max, b.u_max);
  out.horizon = std::max(a.horizon, b.horizon);
  return out;
}

// l(alpha) = -(1/n) sum_k sum_m w_k log pi(u | x).
inline double task_loss(const BatchStats& st, const Vec& alpha) {
  require(alpha.size() == st.dim(), "task_loss: alpha dimension mismatch");
  const double s2 = st.sigma * st.sigma;
  const double quad = st.c - 2.0 * alpha.dot(st.h) + alpha.dot(st.G * alpha);
  return (0.5 * st.terms * std::log(2.0 * std::numbers::pi * s2) +
          quad / (2.0 * s2)) /
         st.n;
}

inline Vec grad_alpha_loss(const BatchStats& st, const Vec& alpha) {
  require(alpha.size() == st.dim(), "grad_alpha_loss: alpha dimension mismatch");
  return (st.G * alpha - st.h) / (st.n * st.sigma * st.sigma);
}

inline Mat fisher_matrix(const BatchStats& st) {
  return st.G / (st.n * st.sigma * st.sigma);
}

inline double task_loss(const GaussianPolicy& policy,
                        const std::vector<Trajectory>& trajs,
                        const FeatureMap& fmap,
                        const std::vector<double>& weights = {}) {
  policy.validate(fmap);
  return task_loss(summarize(trajs, fmap, policy.sigma, policy.action_dim, weights),
                   policy.alpha);
}

inline Vec grad_alpha_loss(const GaussianPolicy& policy,
                           const std::vector<Trajectory>& trajs,
                           const FeatureMap& fmap,
                           const std::vector<double>& weights = {}) {
  policy.validate(fmap);
  return grad_alpha_loss(
      summarize(trajs, fmap, policy.sigma, policy.action_dim, weights),
      policy.alpha);
}

inline Mat fisher_matrix(const GaussianPolicy& policy,
                         const std::vector<Trajectory>& trajs,
                         const FeatureMap& fmap) {
  policy.validate(fmap);
  return fisher_matrix(summarize(trajs, fmap, policy.sigma, policy.action_dim));
}

struct PGGradient {
  Vec grad;
  std::optional<Mat> fisher;
};

enum class BaseLearner { kEReinforce, kENac };

inline double enac_regularizer(const Mat& fisher) {
  return 1e-6 * fisher.trace() / static_cast<double>(fisher.rows());
}

// Natural-gradient direction (F + eps I)^{-1} g.
inline Vec natural_direction(const Mat& fisher, const Vec& grad) {
  require(fisher.rows() == grad.size() && fisher.cols() == grad.size(),
          "natural_direction: dimension mismatch");
  double eps = enac_regularizer(fisher);
  if (!(eps > 0.0)) eps = 1e-12;
  const Mat reg = fisher + eps * Mat::Identity(fisher.rows(), fisher.cols());
  return solve_spd(reg, grad, "eNAC Fisher solve");
}

inline Vec base_learner_step(BaseLearner kind, const Vec& alpha,
                             const PGGradient& g, double rate) {
  require(rate > 0, "base_learner_step: rate must be > 0");
  require(alpha.size() == g.grad.size(), "base_learner_step: dimension mismatch");
  if (kind == BaseLearner::kEReinforce) return alpha - rate * g.grad;
  require(g.fisher.has_value(), "base_learner_step: eNAC needs a Fisher matrix");
  return alpha - rate * natural_direction(*g.fisher, g.grad);
}

// Likelihood-ratio estimate of the gradient of the expected trajectory cost,
// with a mean-cost baseline, plus the Fisher matrix of trajectory scores.
inline PGGradient cost_policy_gradient(const GaussianPolicy& policy,
                                       const std::vector<Trajectory>& trajs,
                                       const FeatureMap& fmap) {
  policy.validate(fmap);
  require(!trajs.empty(), "cost_policy_gradient: empty batch");
  const int d = static_cast<int>(policy.alpha.size());
  const int dphi = fmap.feature_dim;
  const double s2 = policy.sigma * policy.sigma;
  const auto n = static_cast<double>(trajs.size());
  std::vector<Vec> scores;
  std::vector<double> costs;
  double mean_cost = 0.0;
  for (const Trajectory& tr : trajs) {
    Vec psi = Vec::Zero(d);
    for (int m = 0; m < tr.length(); ++m) {
      const Vec f = fmap(tr.states[m]);
      const Vec r = tr.actions[m] - policy.mean(f);
      for (int i = 0; i < policy.action_dim; ++i)
        psi.segment(i * dphi, dphi) += (r(i) / s2) * f;
    }
    scores.push_back(std::move(psi));
    costs.push_back(trajectory_cost(tr));
    mean_cost += costs.back() / n;
  }
  PGGradient out;
  out.grad = Vec::Zero(d);
  Mat fisher = Mat::Zero(d, d);
  for (std::size_t k = 0; k < scores.size(); ++k) {
    out.grad += (costs[k] - mean_cost) / n * scores[k];
    fisher += scores[k] * scores[k].transpose() / n;
  }
  out.fisher = symmetrize(fisher);
  return out;
}

struct GradBound {
  double value = 0.0;
  bool rank_deficient = false;
};

// Norm ingredients of the constraints seen so far: max ||A+|| (||b|| + c_max),
// max ||A+||^2 (||b||^2 + c_max^2) and max ||A+||^2 (||b|| + c_max)^2.
struct ConstraintNorms {
  double a1 = 0.0;
  double a2 = 0.0;
  double a3 = 0.0;
  bool rank_deficient = false;
};

inline ConstraintNorms constraint_norms(
    const std::vector<const SafetyConstraint*>& seen, double c_max) {
  ConstraintNorms out;
  for (const SafetyConstraint* con : seen) {
    const PseudoInverse pi = con->pinv();
    const double nb = con->b.norm();
    out.a1 = std::max(out.a1, pi.norm * (nb + c_max));
    out.a2 = std::max(out.a2, pi.norm * pi.norm * (nb * nb + c_max * c_max));
    out.a3 = std::max(out.a3, pi.norm * pi.norm * (nb + c_max) * (nb + c_max));
    out.rank_deficient = out.rank_deficient || pi.rank_deficient;
  }
  return out;
}

// (M / sigma^2) (u_max + max ||A+|| (||b|| + c_max) Phi_max) Phi_max.
inline GradBound lemma1_grad_bound(
    const TaskSpec& task, const std::vector<const SafetyConstraint*>& seen,
    double c_max, double u_max, double phi_max) {
  require(task.sigma > 0 && task.horizon >= 1, "lemma1_grad_bound: bad task");
  const ConstraintNorms cn = constraint_norms(seen, c_max);
  GradBound out;
  out.value = task.horizon / (task.sigma * task.sigma) *
              (u_max + cn.a1 * phi_max) * phi_max;
  out.rank_deficient = cn.rank_deficient;
  return out;
}

}  // namespace safepg

#endif  // SAFEPG_POLICY_HPP_
