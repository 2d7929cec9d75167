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

#ifndef SAFEPG_CONSTRAINT_HPP_
#define SAFEPG_CONSTRAINT_HPP_

#include <algorithm>
#include <cmath>

#include "safepg/linalg.hpp"

namespace safepg {

// Per-task safety polytope A * alpha <= b on the policy parameters.
struct SafetyConstraint {
  Mat A;
  Vec b;
  double tol = 1e-6;

  int dim() const { return static_cast<int>(b.size()); }

  PseudoInverse pinv() const { return pseudo_inverse(A); }

  // max_i (A alpha - b)_i; <= 0 means satisfied.
  double max_violation(const Vec& alpha) const {
    require(alpha.size() == A.cols(), "constraint: alpha dimension mismatch");
    return (A * alpha - b).maxCoeff();
  }

  bool satisfied(const Vec& alpha) const { return max_violation(alpha) <= tol; }
};

// Euclidean projection onto {c >= 0, ||c|| <= c_max}. The orthant is a cone
// and the ball is centered at its apex, so clamp-then-rescale is exact.
inline Vec project_slack(const Vec& c, double c_max) {
  Vec out = c.cwiseMax(0.0);
  const double n = out.norm();
  if (n > c_max && n > 0.0) out *= c_max / n;
  return out;
}

}  // namespace safepg

#endif  // SAFEPG_CONSTRAINT_HPP_
