#pragma once

// Communication and sensing performance functionals.
//
// Most quantities have two implementations: a reference computed with
// std::complex arithmetic, and a widened one that uses only real matrices.
// The two are kept deliberately independent so each can check the other.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pisac/config.hpp"
#include "pisac/errors.hpp"
#include "pisac/scenario.hpp"
#include "pisac/widened.hpp"

namespace pisac {

/// Precoders, sensing beamformer and (optionally) the receive combiner.
struct BeamformingSet {
  std::vector<CMatrix> w;   // per user, N_t x N_k
  CMatrix v;                // N_t x 1
  std::optional<CMatrix> d; // N_r x 1

  double total_precoder_power() const {
    double p = 0.0;
    for (const auto& wk : w) p += wk.squared_norm();
    return p;
  }
};

namespace ref {

using CMat = Eigen::MatrixXcd;

inline CMat to_complex(const CMatrix& m) {
  CMat c(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) c(i, j) = {m.re(i, j), m.im(i, j)};
  }
  return c;
}

inline CMatrix from_complex(const CMat& c) {
  CMatrix m = CMatrix::zero(c.rows(), c.cols());
  m.re = c.real();
  m.im = c.imag();
  return m;
}

/// log|det A| from a partially pivoted LU factorization.
inline double log_abs_det(const CMat& a) {
  const Eigen::PartialPivLU<CMat> lu(a);
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) s += std::log(std::abs(lu.matrixLU()(i, i)));
  return s;
}

}  // namespace ref

namespace detail {

inline void check_rate_shapes(int k, const CMatrix& h, const CMatrix& f, const BeamformingSet& beams) {
  if (k < 0 || k >= static_cast<int>(beams.w.size())) throw DimensionError("user_rate: user index out of range");
  const auto nt = f.rows();
  if (f.cols() != nt || h.cols() != nt || beams.v.rows() != nt || beams.v.cols() != 1) {
    throw DimensionError("user_rate: inconsistent transmit dimension");
  }
  for (const auto& wu : beams.w) {
    if (wu.rows() != nt) throw DimensionError("user_rate: precoder row count differs from N_t");
  }
}

}  // namespace detail

/// Achievable rate of user k in bits/s/Hz,
///   log2 det(I + S_k J_k^{-1}),  S_k = H F W_k W_k^H F^H H^H,
///   J_k = sigma^2 I + H F (sum_{u != k} W_u W_u^H + v v^H) F^H H^H.
/// Complex-arithmetic reference.
inline double user_rate(int k, const CMatrix& h, const CMatrix& f, const BeamformingSet& beams, double noise) {
  detail::check_rate_shapes(k, h, f, beams);
  const ref::CMat hf = ref::to_complex(h) * ref::to_complex(f);
  const auto nk = hf.rows();
  ref::CMat interference = noise * ref::CMat::Identity(nk, nk);
  for (std::size_t u = 0; u < beams.w.size(); ++u) {
    if (static_cast<int>(u) == k) continue;
    const ref::CMat a = hf * ref::to_complex(beams.w[u]);
    interference += a * a.adjoint();
  }
  const ref::CMat av = hf * ref::to_complex(beams.v);
  interference += av * av.adjoint();
  const ref::CMat as = hf * ref::to_complex(beams.w[k]);
  const ref::CMat signal = as * as.adjoint();
  const Eigen::PartialPivLU<ref::CMat> lu(interference);
  if (lu.rcond() < kSingularRcond) throw NotPositiveDefiniteError("user_rate: interference matrix is singular");
  const ref::CMat m = ref::CMat::Identity(nk, nk) + signal * lu.inverse();
  return ref::log_abs_det(m) / std::numbers::ln2;
}

namespace detail {

/// [P; Q] = W(H) W(F) (sum_u W(W_u) W(W_u)^T + W(v) W(v)^T) W(F)^T [Re H^T; -Im H^T]
/// where W(.) is widening and the sum runs over `include`.
inline RealMatrix rate_pq(const CMatrix& h, const CMatrix& f, const BeamformingSet& beams,
                          const std::vector<bool>& include) {
  const RealMatrix hf = widen(h).data * widen(f).data;
  const auto nt2 = hf.cols();
  RealMatrix cov = RealMatrix::Zero(nt2, nt2);
  for (std::size_t u = 0; u < beams.w.size(); ++u) {
    if (!include[u]) continue;
    const RealMatrix wu = widen(beams.w[u]).data;
    cov.noalias() += wu * wu.transpose();
  }
  const RealMatrix vh = widen(beams.v).data;
  cov.noalias() += vh * vh.transpose();
  RealMatrix h_right(2 * h.cols(), h.rows());
  h_right.topRows(h.cols()) = h.re.transpose();
  h_right.bottomRows(h.cols()) = -h.im.transpose();
  return hf * cov * widen(f).data.transpose() * h_right;
}

/// (1/2) log det [[s I + P, Q^T], [Q, s I + P]] via Cholesky.
inline double half_logdet_block(const RealMatrix& pq, double noise) {
  const auto n = pq.cols();
  const RealMatrix p = pq.topRows(n);
  const RealMatrix q = pq.bottomRows(n);
  RealMatrix blk(2 * n, 2 * n);
  blk.topLeftCorner(n, n) = p + noise * RealMatrix::Identity(n, n);
  blk.topRightCorner(n, n) = q.transpose();
  blk.bottomLeftCorner(n, n) = q;
  blk.bottomRightCorner(n, n) = blk.topLeftCorner(n, n);
  Eigen::LLT<RealMatrix> llt(blk);
  if (llt.info() != Eigen::Success) throw NotPositiveDefiniteError("user_rate: block matrix is not positive definite");
  double s = 0.0;
  for (Eigen::Index i = 0; i < blk.rows(); ++i) s += std::log(llt.matrixLLT()(i, i));
  return s;  // = (1/2) log det(blk)
}

}  // namespace detail

/// Same rate through real block determinants of the P/Q stacks.
inline double user_rate_widened(int k, const CMatrix& h, const CMatrix& f, const BeamformingSet& beams,
                                double noise) {
  detail::check_rate_shapes(k, h, f, beams);
  std::vector<bool> all(beams.w.size(), true);
  std::vector<bool> others = all;
  others[k] = false;
  const double l1 = detail::half_logdet_block(detail::rate_pq(h, f, beams, all), noise);
  const double l2 = detail::half_logdet_block(detail::rate_pq(h, f, beams, others), noise);
  return (l1 - l2) / std::numbers::ln2;
}

/// B = G F (sum_k W_k W_k^H) F^H G^H + sigma_z^2 I, complex reference.
inline CMatrix sensing_covariance(const CMatrix& g, const CMatrix& f, const BeamformingSet& beams, double noise) {
  if (g.cols() != f.rows()) throw DimensionError("sensing_covariance: G and F do not conform");
  const ref::CMat gf = ref::to_complex(g) * ref::to_complex(f);
  ref::CMat b = noise * ref::CMat::Identity(g.rows(), g.rows());
  for (const auto& wk : beams.w) {
    const ref::CMat a = gf * ref::to_complex(wk);
    b += a * a.adjoint();
  }
  return ref::from_complex(b);
}

/// [Re B; Im B] = W(G) W(F) sum_k W(W_k) W(W_k)^T W(F)^T [Re G^T; -Im G^T] + sigma^2 [I; 0].
inline CMatrix sensing_covariance_widened(const CMatrix& g, const CMatrix& f, const BeamformingSet& beams,
                                          double noise) {
  if (g.cols() != f.rows()) throw DimensionError("sensing_covariance: G and F do not conform");
  const RealMatrix gf = widen(g).data * widen(f).data;
  RealMatrix cov = RealMatrix::Zero(gf.cols(), gf.cols());
  for (const auto& wk : beams.w) {
    const RealMatrix wh = widen(wk).data;
    cov.noalias() += wh * wh.transpose();
  }
  RealMatrix g_right(2 * g.cols(), g.rows());
  g_right.topRows(g.cols()) = g.re.transpose();
  g_right.bottomRows(g.cols()) = -g.im.transpose();
  RealMatrix stacked = gf * cov * widen(f).data.transpose() * g_right;
  stacked.topRows(g.rows()) += noise * RealMatrix::Identity(g.rows(), g.rows());
  return unstack(stacked);
}

/// d = B^{-1} f_r / ||B^{-1} f_r||; the inverse goes through cinverse().
inline CMatrix optimal_combiner(const CMatrix& b, const CMatrix& f_r) {
  if (b.rows() != b.cols() || f_r.rows() != b.rows() || f_r.cols() != 1) {
    throw DimensionError("optimal_combiner: shape mismatch");
  }
  const CMatrix x = cmul(cinverse(b), f_r);
  const double n = x.norm();
  if (!(n > 0.0)) throw SingularMatrixError("optimal_combiner: B^{-1} f_r vanishes");
  return cscale(x, 1.0 / n);
}

/// Echo power P_s = |d^H G F v|^2.
inline double sensing_power(const CMatrix& d, const CMatrix& g, const CMatrix& f, const CMatrix& v) {
  const ref::CMat s = ref::to_complex(d).adjoint() * ref::to_complex(g) * ref::to_complex(f) * ref::to_complex(v);
  return std::norm(s(0, 0));
}

/// gamma_s = P_s / (d^H B d), complex reference.
inline double sensing_sinr(const CMatrix& d, const CMatrix& g, const CMatrix& f, const CMatrix& v, const CMatrix& b) {
  const ref::CMat dc = ref::to_complex(d);
  const double den = (dc.adjoint() * ref::to_complex(b) * dc)(0, 0).real();
  return sensing_power(d, g, f, v) / den;
}

/// gamma_s = a / b computed from widened quantities.
inline double sensing_sinr_widened(const CMatrix& d, const CMatrix& g, const CMatrix& f, const CMatrix& v,
                                   const CMatrix& b) {
  const RealMatrix dh = widen(d).data;
  const RealMatrix ds = stack(d);
  const RealMatrix gfv = widen(g).data * widen(f).data * widen(v).data;
  const RealMatrix a_vec = dh.transpose() * gfv * gfv.transpose() * ds;
  const RealMatrix b_vec = dh.transpose() * widen(b).data * ds;
  return a_vec(0, 0) / b_vec(0, 0);
}

/// Maximum of gamma_s over unit combiners: |f_t^H F v|^2 * f_r^H B^{-1} f_r.
inline double sensing_sinr_closed_form(const CMatrix& f_t, const CMatrix& f_r, const CMatrix& f, const CMatrix& v,
                                       const CMatrix& b) {
  const CScalar s = cdot(f_t, cmul(f, v));
  const CScalar q = cdot(f_r, csolve_widened(b, f_r));
  return s.norm2() * q.re;
}

/// Smallest pairwise distance between local antenna coordinates; +inf for fewer than two.
inline double min_pairwise_distance(std::span<const std::array<double, 2>> pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      best = std::min(best, std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]));
    }
  }
  return best;
}

inline double hinge(double x) { return x > 0.0 ? x : 0.0; }

struct LossBreakdown {
  double total = 0.0;
  double neg_sum_rate = 0.0;
  double spacing_penalty = 0.0;
  double sinr_penalty = 0.0;
};

/// -sum R + sum nu_d (d_min - d_k)^+ + nu_s (gamma0 - gamma_s)^+
inline LossBreakdown training_loss(std::span<const double> rates, std::span<const double> spacing,
                                   double gamma_s, const SystemConfig& cfg) {
  LossBreakdown l;
  for (double r : rates) l.neg_sum_rate -= r;
  for (double dk : spacing) {
    if (std::isfinite(dk)) l.spacing_penalty += cfg.nu_d * hinge(cfg.d_min - dk);
  }
  l.sinr_penalty = cfg.nu_s * hinge(cfg.gamma0 - gamma_s);
  l.total = l.neg_sum_rate + l.spacing_penalty + l.sinr_penalty;
  return l;
}

/// Everything reported for one evaluated scenario.
struct MetricsRecord {
  std::vector<double> rates;    // bits/s/Hz per user
  double sum_rate = 0.0;
  double gamma_s = 0.0;
  double p_s = 0.0;
  std::vector<double> spacing;  // d_k per user (m)
  bool power_ok = true;         // Tr(sum W W^H) <= P_max
  bool beam_unit = true;        // ||v|| = 1
  bool sinr_ok = true;          // gamma_s >= gamma0
  bool spacing_ok = true;       // d_k >= d_min for every user
};

/// Evaluates a placement and beamformers with the closed-form combiner.
inline MetricsRecord evaluate_metrics(const PAPlacement& pa, const MAPlacement& ma, const Scenario& sc,
                                      BeamformingSet& beams, const SystemConfig& cfg) {
  const ChannelSet ch = synthesize_channels(pa, ma, sc, cfg);
  MetricsRecord rec;
  for (int k = 0; k < cfg.users; ++k) {
    rec.rates.push_back(user_rate(k, ch.h[k], ch.f, beams, cfg.noise_comm));
    rec.sum_rate += rec.rates.back();
  }
  const CMatrix b = sensing_covariance(ch.g, ch.f, beams, cfg.noise_sense);
  beams.d = optimal_combiner(b, ch.f_r);
  rec.gamma_s = sensing_sinr(*beams.d, ch.g, ch.f, beams.v, b);
  rec.p_s = sensing_power(*beams.d, ch.g, ch.f, beams.v);
  for (int k = 0; k < cfg.users; ++k) {
    rec.spacing.push_back(min_pairwise_distance(std::span(ma.local).subspan(k * ma.per_user, ma.per_user)));
  }
  rec.power_ok = beams.total_precoder_power() <= cfg.p_max + 1e-9;
  rec.beam_unit = std::abs(beams.v.norm() - 1.0) <= 1e-9;
  rec.sinr_ok = rec.gamma_s >= cfg.gamma0;
  rec.spacing_ok = std::all_of(rec.spacing.begin(), rec.spacing.end(), [&](double d) { return d >= cfg.d_min; });
  return rec;
}

}  // namespace pisac
