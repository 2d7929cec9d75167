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

// Small dense linear-algebra helpers shared by the solvers.

#ifndef SAFEPG_LINALG_HPP_
#define SAFEPG_LINALG_HPP_

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "safepg/errors.hpp"

namespace safepg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Column-major vectorization, matching vec(L) in the vec-space Z_L system.
inline Vec vec(const Mat& m) {
  return Eigen::Map<const Vec>(m.data(), m.size());
}

inline Mat unvec(const Vec& v, Eigen::Index rows, Eigen::Index cols) {
  require(v.size() == rows * cols, "unvec: size mismatch");
  return Eigen::Map<const Mat>(v.data(), rows, cols);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

struct PseudoInverse {
  Mat pinv;
  int rank = 0;
  // Spectral norm of the pseudo-inverse, 1 / smallest retained singular value.
  double norm = 0.0;
  bool rank_deficient = false;
};

// Singular values below rel_cutoff * sigma_max are treated as zero.
inline PseudoInverse pseudo_inverse(const Mat& a, double rel_cutoff = 1e-10) {
  Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  PseudoInverse out;
  out.pinv = Mat::Zero(a.cols(), a.rows());
  if (sv.size() == 0 || sv(0) == 0.0) {
    out.rank_deficient = a.size() > 0;
    return out;
  }
  const double cutoff = rel_cutoff * sv(0);
  double smallest = sv(0);
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff) {
      out.pinv += svd.matrixV().col(i) * (1.0 / sv(i)) *
                  svd.matrixU().col(i).transpose();
      ++out.rank;
      smallest = sv(i);
    }
  }
  out.norm = 1.0 / smallest;
  out.rank_deficient = out.rank < std::min(a.rows(), a.cols());
  return out;
}

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

struct EigenRange {
  double min = 0.0;
  double max = 0.0;
};

inline EigenRange eigen_range(const Mat& sym) {
  if (sym.size() == 0) return {};
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(sym),
                                        Eigen::EigenvaluesOnly);
  const Vec& ev = es.eigenvalues();
  return {ev.minCoeff(), ev.maxCoeff()};
}

// Orthonormal polar factor U V^T of a tall matrix (d >= k).
inline Mat polar_factor(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

inline Mat sqrt_psd(const Mat& x) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(x));
  Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Solves an SPD system; throws NumericalFailure when the factorization fails.
inline Vec solve_spd(const Mat& a, const Vec& b, const char* what) {
  Eigen::LLT<Mat> llt(a);
  if (llt.info() != Eigen::Success)
    throw NumericalFailure(std::string(what) + ": matrix not positive definite");
  Vec x = llt.solve(b);
  if (!x.allFinite())
    throw NumericalFailure(std::string(what) + ": non-finite solution");
  return x;
}

inline bool is_positive_definite(const Mat& a) {
  Eigen::LLT<Mat> llt(a);
  return llt.info() == Eigen::Success;
}

}  // namespace safepg

#endif  // SAFEPG_LINALG_HPP_
