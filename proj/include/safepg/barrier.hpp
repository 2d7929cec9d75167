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

// Log-barrier interior-point method for small dense convex problems
//
//   minimize f(x)  subject to  x in dom(phi_i), i = 1..m,
//
// where each phi_i is a self-concordant barrier of degree nu_i. Centering
// steps minimize t f + sum phi_i by damped Newton; t grows by mu until the
// duality-gap bound sum nu_i / t drops below the tolerance.

#ifndef SAFEPG_BARRIER_HPP_
#define SAFEPG_BARRIER_HPP_

#include <cmath>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "safepg/errors.hpp"
#include "safepg/linalg.hpp"

namespace safepg {

struct SmoothObjective {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> grad;
  std::function<Mat(const Vec&)> hess;
};

struct BarrierTerm {
  // nullopt outside the open domain.
  std::function<std::optional<double>(const Vec&)> value;
  std::function<Vec(const Vec&)> grad;
  std::function<Mat(const Vec&)> hess;
  double degree = 1.0;
};

struct BarrierOptions {
  double t0 = 1.0;
  double mu = 10.0;
  double gap_tol = 1e-10;
  int max_outer = 60;
  int max_newton = 200;
  double newton_tol = 1e-12;  // on lambda^2 / 2
  // Checked after every centering; true ends the solve early.
  std::function<bool(const Vec&)> stop_when;
};

struct BarrierResult {
  Vec x;
  double value = 0.0;
  double gap = 0.0;
  int newton_steps = 0;
  bool converged = false;
  bool stopped_early = false;
};

// -log(a^T x + b0).
inline BarrierTerm linear_barrier(Vec a, double b0) {
  BarrierTerm t;
  t.value = [a, b0](const Vec& x) -> std::optional<double> {
    const double v = a.dot(x) + b0;
    if (!(v > 0.0)) return std::nullopt;
    return -std::log(v);
  };
  t.grad = [a, b0](const Vec& x) -> Vec { return -a / (a.dot(x) + b0); };
  t.hess = [a, b0](const Vec& x) -> Mat {
    const double v = a.dot(x) + b0;
    return a * a.transpose() / (v * v);
  };
  t.degree = 1.0;
  return t;
}

// -log(tau^2 - ||y||^2) with y = M x + m0 and tau = ts^T x + t0 > 0.
inline BarrierTerm soc_barrier(Mat m, Vec m0, Vec ts, double t0) {
  BarrierTerm t;
  auto parts = [m, m0, ts, t0](const Vec& x) {
    const Vec y = m * x + m0;
    const double tau = ts.dot(x) + t0;
    return std::make_pair(y, tau);
  };
  t.value = [parts](const Vec& x) -> std::optional<double> {
    const auto [y, tau] = parts(x);
    const double g = tau * tau - y.squaredNorm();
    if (!(tau > 0.0) || !(g > 0.0)) return std::nullopt;
    return -std::log(g);
  };
  t.grad = [parts, m, ts](const Vec& x) -> Vec {
    const auto [y, tau] = parts(x);
    const double g = tau * tau - y.squaredNorm();
    const Vec dg = 2.0 * tau * ts - 2.0 * m.transpose() * y;
    return -dg / g;
  };
  t.hess = [parts, m, ts](const Vec& x) -> Mat {
    const auto [y, tau] = parts(x);
    const double g = tau * tau - y.squaredNorm();
    const Vec dg = 2.0 * tau * ts - 2.0 * m.transpose() * y;
    const Mat d2g = 2.0 * ts * ts.transpose() - 2.0 * m.transpose() * m;
    return -d2g / g + dg * dg.transpose() / (g * g);
  };
  t.degree = 2.0;
  return t;
}

// Newton direction for an SPD-in-theory system, adding a growing multiple of
// the identity when the Cholesky factorization fails.
inline Vec regularized_newton_direction(const Mat& h, const Vec& g) {
  const Mat hs = symmetrize(h);
  double reg = 0.0;
  const double scale = std::max(1e-300, hs.diagonal().cwiseAbs().maxCoeff());
  for (int attempt = 0; attempt < 40; ++attempt) {
    Eigen::LLT<Mat> llt(hs + reg * Mat::Identity(hs.rows(), hs.cols()));
    if (llt.info() == Eigen::Success) {
      Vec dx = llt.solve(-g);
      if (dx.allFinite()) return dx;
    }
    reg = reg == 0.0 ? 1e-12 * scale : reg * 10.0;
  }
  throw NumericalFailure("barrier: Newton system could not be regularized");
}

inline BarrierResult barrier_minimize(const SmoothObjective& f,
                                      const std::vector<BarrierTerm>& terms,
                                      const Vec& x0,
                                      const BarrierOptions& opt = {}) {
  double nu = 0.0;
  for (const BarrierTerm& b : terms) nu += b.degree;
  auto phi = [&](const Vec& x) -> std::optional<double> {
    double total = 0.0;
    for (const BarrierTerm& b : terms) {
      const auto v = b.value(x);
      if (!v || !std::isfinite(*v)) return std::nullopt;
      total += *v;
    }
    return total;
  };
  if (!phi(x0)) throw ContractViolation("barrier_minimize: x0 is not strictly feasible");

  BarrierResult res;
  res.x = x0;
  double t = opt.t0;
  for (int outer = 0; outer < opt.max_outer; ++outer) {
    auto centered = [&](const Vec& x) -> std::optional<double> {
      const auto p = phi(x);
      if (!p) return std::nullopt;
      return t * f.value(x) + *p;
    };
    for (int it = 0; it < opt.max_newton; ++it) {
      Vec g = t * f.grad(res.x);
      Mat h = t * f.hess(res.x);
      for (const BarrierTerm& b : terms) {
        g += b.grad(res.x);
        h += b.hess(res.x);
      }
      const Vec dx = regularized_newton_direction(h, g);
      const double decrement = -g.dot(dx);
      ++res.newton_steps;
      if (decrement / 2.0 <= opt.newton_tol) break;
      const double base = *centered(res.x);
      double step = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Vec cand = res.x + step * dx;
        const auto v = centered(cand);
        if (v && *v <= base - 0.25 * step * decrement) {
          res.x = cand;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
    res.gap = nu / t;
    if (opt.stop_when && opt.stop_when(res.x)) {
      res.stopped_early = true;
      break;
    }
    if (res.gap <= opt.gap_tol) {
      res.converged = true;
      break;
    }
    t *= opt.mu;
  }
  res.value = f.value(res.x);
  return res;
}

}  // namespace safepg

#endif  // SAFEPG_BARRIER_HPP_
