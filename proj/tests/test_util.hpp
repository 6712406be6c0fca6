#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>

#include <Eigen/Dense>

#include "pisac/rng.hpp"
#include "pisac/widened.hpp"

namespace testutil {

using pisac::CMatrix;
using pisac::RealMatrix;

inline RealMatrix random_real(pisac::Rng& rng, Eigen::Index m, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  RealMatrix r(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) r(i, j) = rng.uniform(lo, hi);
  }
  return r;
}

inline CMatrix random_complex(pisac::Rng& rng, Eigen::Index m, Eigen::Index n) {
  return {random_real(rng, m, n), random_real(rng, m, n)};
}

/// Random Hermitian positive definite matrix A A^H + shift I.
inline CMatrix random_hpd(pisac::Rng& rng, Eigen::Index n, double shift = 0.5) {
  const CMatrix a = random_complex(rng, n, n);
  CMatrix h = pisac::cmul(a, pisac::adjoint(a));
  h.re += shift * RealMatrix::Identity(n, n);
  return h;
}

inline Eigen::MatrixXcd to_std(const CMatrix& m) {
  Eigen::MatrixXcd c(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) c(i, j) = {m.re(i, j), m.im(i, j)};
  }
  return c;
}

inline double max_abs_diff(const CMatrix& a, const CMatrix& b) {
  return std::max((a.re - b.re).cwiseAbs().maxCoeff(), (a.im - b.im).cwiseAbs().maxCoeff());
}

inline double max_abs_diff(const CMatrix& a, const Eigen::MatrixXcd& b) {
  return std::max((a.re - b.real()).cwiseAbs().maxCoeff(), (a.im - b.imag()).cwiseAbs().maxCoeff());
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace testutil
