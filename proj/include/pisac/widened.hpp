#pragma once

// Complex matrix algebra carried entirely by real matrices.
//
// A complex m x n matrix C is stored as the pair (Re C, Im C). The widening
// map  C -> [[Re C, -Im C], [Im C, Re C]]  is a ring homomorphism from complex
// m x n matrices into real 2m x 2n matrices, so products, adjoints and
// solves can all be done with real arithmetic.

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/LU>

#include "pisac/errors.hpp"

namespace pisac {

using RealMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Reciprocal condition estimates below this are treated as singular.
inline constexpr double kSingularRcond = 1e-14;

/// A complex scalar as a (re, im) pair.
struct CScalar {
  double re = 0.0;
  double im = 0.0;

  double norm2() const { return re * re + im * im; }
  double abs() const { return std::hypot(re, im); }
  double arg() const { return std::atan2(im, re); }
  CScalar conj() const { return {re, -im}; }

  friend CScalar operator+(CScalar a, CScalar b) { return {a.re + b.re, a.im + b.im}; }
  friend CScalar operator*(CScalar a, CScalar b) {
    return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
  }
  friend CScalar operator*(double s, CScalar a) { return {s * a.re, s * a.im}; }

  /// r * e^{j phase}
  static CScalar polar(double r, double phase) { return {r * std::cos(phase), r * std::sin(phase)}; }
};

/// Complex matrix as a pair of equally sized real matrices.
struct CMatrix {
  RealMatrix re;
  RealMatrix im;

  CMatrix() = default;
  CMatrix(RealMatrix real, RealMatrix imag) : re(std::move(real)), im(std::move(imag)) {
    if (re.rows() != im.rows() || re.cols() != im.cols()) {
      throw DimensionError("CMatrix: real and imaginary parts differ in shape");
    }
  }

  static CMatrix zero(Eigen::Index rows, Eigen::Index cols) {
    return {RealMatrix::Zero(rows, cols), RealMatrix::Zero(rows, cols)};
  }
  static CMatrix identity(Eigen::Index n) { return {RealMatrix::Identity(n, n), RealMatrix::Zero(n, n)}; }
  static CMatrix real(RealMatrix m) {
    RealMatrix z = RealMatrix::Zero(m.rows(), m.cols());
    return {std::move(m), std::move(z)};
  }

  Eigen::Index rows() const { return re.rows(); }
  Eigen::Index cols() const { return re.cols(); }

  CScalar operator()(Eigen::Index r, Eigen::Index c) const { return {re(r, c), im(r, c)}; }
  void set(Eigen::Index r, Eigen::Index c, CScalar v) {
    re(r, c) = v.re;
    im(r, c) = v.im;
  }

  bool all_finite() const { return re.allFinite() && im.allFinite(); }

  /// Frobenius norm.
  double norm() const { return std::sqrt(re.squaredNorm() + im.squaredNorm()); }
  double squared_norm() const { return re.squaredNorm() + im.squaredNorm(); }
};

/// Real 2m x 2n embedding [[Re, -Im], [Im, Re]] of an m x n complex matrix.
struct WidenedMatrix {
  RealMatrix data;

  Eigen::Index rows() const { return data.rows() / 2; }
  Eigen::Index cols() const { return data.cols() / 2; }

  /// Recovers the complex matrix from the left block column.
  CMatrix narrow() const {
    const auto m = rows();
    const auto n = cols();
    return {data.topLeftCorner(m, n), data.bottomLeftCorner(m, n)};
  }
};

inline WidenedMatrix widen(const CMatrix& c) {
  const auto m = c.rows();
  const auto n = c.cols();
  WidenedMatrix w{RealMatrix(2 * m, 2 * n)};
  w.data.topLeftCorner(m, n) = c.re;
  w.data.topRightCorner(m, n) = -c.im;
  w.data.bottomLeftCorner(m, n) = c.im;
  w.data.bottomRightCorner(m, n) = c.re;
  return w;
}

/// [Re; Im] stacking of a complex matrix (the left block column of its widening).
inline RealMatrix stack(const CMatrix& c) {
  RealMatrix s(2 * c.rows(), c.cols());
  s.topRows(c.rows()) = c.re;
  s.bottomRows(c.rows()) = c.im;
  return s;
}

inline CMatrix unstack(const RealMatrix& s) {
  if (s.rows() % 2 != 0) throw DimensionError("unstack: odd row count");
  const auto m = s.rows() / 2;
  return {s.topRows(m), s.bottomRows(m)};
}

inline void require_same_shape(const CMatrix& a, const CMatrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch");
  }
}

inline CMatrix cadd(const CMatrix& a, const CMatrix& b) {
  require_same_shape(a, b, "cadd");
  return {a.re + b.re, a.im + b.im};
}

inline CMatrix csub(const CMatrix& a, const CMatrix& b) {
  require_same_shape(a, b, "csub");
  return {a.re - b.re, a.im - b.im};
}

inline CMatrix cscale(const CMatrix& a, double s) { return {a.re * s, a.im * s}; }

inline CMatrix cmul(const CMatrix& a, const CMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("cmul: inner dimensions differ");
  return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}

/// Conjugate transpose.
inline CMatrix adjoint(const CMatrix& a) { return {a.re.transpose(), -a.im.transpose()}; }

/// Tr(A) for square A.
inline CScalar ctrace(const CMatrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("ctrace: matrix not square");
  return {a.re.trace(), a.im.trace()};
}

/// Natural log of |det D| for Hermitian positive definite D.
///
/// Uses det(widen(D)) = |det D|^2 and a Cholesky factorization of the
/// symmetric positive definite widened matrix.
inline double logdet_hpd(const CMatrix& d) {
  if (d.rows() != d.cols()) throw DimensionError("logdet_hpd: matrix not square");
  const RealMatrix w = widen(d).data;
  Eigen::LLT<RealMatrix> llt(w);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefiniteError("logdet_hpd: matrix is not positive definite");
  }
  const auto& l = llt.matrixLLT();
  double half_logdet = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) half_logdet += std::log(l(i, i));
  // log det(w) = 2 sum log l_ii and log|det D| = log det(w) / 2.
  return half_logdet;
}

enum class InversePath { kBlock, kWidenedSolve };

namespace detail {

inline bool well_conditioned(const Eigen::PartialPivLU<RealMatrix>& lu) {
  const double rc = lu.rcond();
  return std::isfinite(rc) && rc >= kSingularRcond;
}

inline RealMatrix widened_solve(const CMatrix& m, const RealMatrix& rhs_stacked) {
  const Eigen::PartialPivLU<RealMatrix> lu(widen(m).data);
  if (!well_conditioned(lu)) throw SingularMatrixError("widened solve: matrix is singular");
  return lu.solve(rhs_stacked);
}

}  // namespace detail

/// Solves M X = Y through the widened 2n x 2n real system.
inline CMatrix csolve_widened(const CMatrix& m, const CMatrix& y) {
  if (m.rows() != m.cols()) throw DimensionError("csolve: matrix not square");
  if (y.rows() != m.rows()) throw DimensionError("csolve: right-hand side row count differs");
  return unstack(detail::widened_solve(m, stack(y)));
}

/// Complex inverse from the real and imaginary parts alone:
///   Re N = (Re M + Im M (Re M)^-1 Im M)^-1,   Im N = -(Re M)^-1 Im M Re N.
/// Falls back to the widened solve when Re M (or the Schur term) is singular.
inline CMatrix cinverse(const CMatrix& m, InversePath* used = nullptr) {
  if (m.rows() != m.cols()) throw DimensionError("cinverse: matrix not square");
  const auto n = m.rows();
  const Eigen::PartialPivLU<RealMatrix> re_lu(m.re);
  if (detail::well_conditioned(re_lu)) {
    const RealMatrix re_inv_im = re_lu.solve(m.im);
    const Eigen::PartialPivLU<RealMatrix> schur_lu(RealMatrix(m.re + m.im * re_inv_im));
    if (detail::well_conditioned(schur_lu)) {
      RealMatrix n_re = schur_lu.inverse();
      RealMatrix n_im = -re_inv_im * n_re;
      if (used) *used = InversePath::kBlock;
      return {std::move(n_re), std::move(n_im)};
    }
  }
  if (used) *used = InversePath::kWidenedSolve;
  return csolve_widened(m, CMatrix::identity(n));
}

/// Widened-solve inverse, exposed separately so both routes can be compared.
inline CMatrix cinverse_widened(const CMatrix& m) {
  if (m.rows() != m.cols()) throw DimensionError("cinverse: matrix not square");
  return csolve_widened(m, CMatrix::identity(m.rows()));
}

/// Solves M x = y for a single right-hand side using the inverse above.
inline CMatrix csolve(const CMatrix& m, const CMatrix& y) {
  if (y.rows() != m.rows()) throw DimensionError("csolve: right-hand side row count differs");
  return cmul(cinverse(m), y);
}

/// Inner product a^H b of two column vectors.
inline CScalar cdot(const CMatrix& a, const CMatrix& b) {
  if (a.cols() != 1 || b.cols() != 1 || a.rows() != b.rows()) {
    throw DimensionError("cdot: expects column vectors of equal length");
  }
  return {a.re.col(0).dot(b.re.col(0)) + a.im.col(0).dot(b.im.col(0)),
          a.re.col(0).dot(b.im.col(0)) - a.im.col(0).dot(b.re.col(0))};
}

}  // namespace pisac
