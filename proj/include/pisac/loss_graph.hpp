#pragma once

// Differentiable training loss for a batch of scenarios.
//
// Complex quantities are carried as separate re/im tensors; products that feed
// log-determinants and solves use widened real blocks [[re, -im], [im, re]].
//
//   R_k     = (logdet C1_k - logdet C2_k) / (2 ln 2)
//   C1_k    = s^2 I + (A_k Wall)(A_k Wall)^T,   A_k = widen(H_k F)
//   C2_k    = same without user k's precoder columns
//   gamma*  = |f_t^H F v|^2 * f_r^H B^{-1} f_r,  B = s_z^2 I + sum_k (G F W_k)(G F W_k)^H
//   loss    = mean_b [ -sum_k R_k + nu_d sum_k (d_min - d_k)^+ + nu_s (gamma0 - gamma*)^+ ]

#include <cmath>
#include <numbers>
#include <vector>

#include "pisac/autodiff.hpp"
#include "pisac/config.hpp"
#include "pisac/network.hpp"
#include "pisac/ops.hpp"
#include "pisac/scenario.hpp"

namespace pisac {

struct LossGraph {
  ad::Var loss;               // scalar batch mean
  ad::Var sum_rate;           // [B] bits/s/Hz
  ad::Var spacing_penalty;    // [B]
  ad::Var sinr_penalty;       // [B]
  ad::Var gamma;              // [B] closed-form sensing SINR at the optimal combiner
};

namespace graph {

/// [B, m, n] re/im pair -> [B, 2m, 2n] widened block.
inline ad::Var widen_batched(const ad::Var& re, const ad::Var& im) {
  const long last = -1, rows = -2;
  return ad::concat({ad::concat({re, -im}, last), ad::concat({im, re}, last)}, rows);
}

/// Per-batch scenario constants, shaped to broadcast against [B, K, N_k, N_t].
struct Geometry {
  ad::Tensor user_origin[3];  // [B, K, 1, 1]
  ad::Tensor target[3];       // [B, 1]
  std::vector<ad::Tensor> scat[3];  // per scatterer, [B, 1, 1, 1]
  ad::Tensor fr_re, fr_im;    // [B, N_r]
};

inline Geometry batch_geometry(const std::vector<const Scenario*>& batch, const SystemConfig& cfg) {
  const std::size_t bsz = batch.size(), k_users = static_cast<std::size_t>(cfg.users);
  const std::size_t n_r = static_cast<std::size_t>(cfg.n_r);
  Geometry g;
  for (int a = 0; a < 3; ++a) {
    g.user_origin[a] = ad::Tensor(ad::Shape{bsz, k_users, 1, 1});
    g.target[a] = ad::Tensor(ad::Shape{bsz, 1});
    g.scat[a].assign(static_cast<std::size_t>(cfg.scatterers), ad::Tensor(ad::Shape{bsz, 1, 1, 1}));
  }
  g.fr_re = ad::Tensor(ad::Shape{bsz, n_r});
  g.fr_im = ad::Tensor(ad::Shape{bsz, n_r});
  const auto rx = receive_positions(cfg);
  for (std::size_t b = 0; b < bsz; ++b) {
    const Scenario& sc = *batch[b];
    for (int a = 0; a < 3; ++a) {
      for (std::size_t k = 0; k < k_users; ++k) g.user_origin[a][b * k_users + k] = sc.user_origins[k][a];
      g.target[a][b] = sc.target[a];
      for (std::size_t i = 0; i < sc.scatterers.size(); ++i) g.scat[a][i][b] = sc.scatterers[i][a];
    }
    const CMatrix fr = target_steering(rx, sc.target, cfg.wavelength);
    for (std::size_t m = 0; m < n_r; ++m) {
      g.fr_re[b * n_r + m] = fr.re(static_cast<Eigen::Index>(m), 0);
      g.fr_im[b * n_r + m] = fr.im(static_cast<Eigen::Index>(m), 0);
    }
  }
  return g;
}

struct ComplexVar {
  ad::Var re, im;
};

/// (lambda / 4 pi) / d * exp(-j 2 pi d / lambda), elementwise.
inline ComplexVar spherical(const ad::Var& d, double wavelength) {
  const double k = 2.0 * std::numbers::pi / wavelength;
  const ad::Var mag = ad::scale(ad::reciprocal(d), wavelength / (4.0 * std::numbers::pi));
  const ad::Var ph = ad::scale(d, -k);
  return {ad::mul(mag, ad::cos(ph)), ad::mul(mag, ad::sin(ph))};
}

inline ad::Var dist3(const ad::Var& dx, const ad::Var& dy, const ad::Var& dz) {
  return ad::sqrt(ad::add(ad::add(ad::square(dx), ad::square(dy)), ad::square(dz)));
}

}  // namespace graph

/// Builds the loss graph for `out` (network outputs on the same tape) over `batch`.
inline LossGraph build_loss(const NetworkOutput& out, const std::vector<const Scenario*>& batch,
                            const SystemConfig& cfg) {
  using namespace ad;
  Tape& tape = out.pa_y.tape();
  const std::size_t bsz = batch.size();
  const std::size_t n_t = static_cast<std::size_t>(cfg.n_t), n_k = static_cast<std::size_t>(cfg.n_k);
  const std::size_t k_users = static_cast<std::size_t>(cfg.users), n_r = static_cast<std::size_t>(cfg.n_r);
  const double lam = cfg.wavelength;
  const graph::Geometry geo = graph::batch_geometry(batch, cfg);

  // Transmit antenna coordinates: x fixed per waveguide, y from the network, z = 0.
  Tensor px(Shape{n_t});
  for (std::size_t n = 0; n < n_t; ++n) px[n] = static_cast<double>(n) * cfg.d_t / static_cast<double>(n_t - 1);
  const Var tx = tape.constant(px);                        // [N_t]
  const Var ty = reshape(out.pa_y, {bsz, 1, 1, n_t});      // [B, 1, 1, N_t]

  // User antenna coordinates [B, K, N_k, 1].
  const Var ux = add(reshape(slice(out.ma_xy, 3, 0, 1), {bsz, k_users, n_k, 1}), tape.constant(geo.user_origin[0]));
  const Var uy = add(reshape(slice(out.ma_xy, 3, 1, 2), {bsz, k_users, n_k, 1}), tape.constant(geo.user_origin[1]));
  const Var uz = tape.constant(geo.user_origin[2]);

  // LOS [B, K, N_k, N_t].
  const Var d_los = graph::dist3(sub(ux, tx), sub(uy, ty), uz);
  const graph::ComplexVar los = graph::spherical(d_los, lam);

  // NLOS: sum over scatterers of lambda/(4 pi) e^{-jk(du - dt)} / (dt du).
  Var nl_re, nl_im;
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.scatterers); ++i) {
    const Var sx = tape.constant(geo.scat[0][i]), sy = tape.constant(geo.scat[1][i]), sz = tape.constant(geo.scat[2][i]);
    const Var dt = graph::dist3(sub(tx, sx), sub(ty, sy), sz);
    const Var du = graph::dist3(sub(ux, sx), sub(uy, sy), sub(uz, sz));
    const double kw = 2.0 * std::numbers::pi / lam;
    const Var mag = scale(reciprocal(mul(dt, du)), lam / (4.0 * std::numbers::pi));
    const Var ph = scale(sub(du, dt), -kw);
    const Var re = mul(mag, cos(ph)), im = mul(mag, sin(ph));
    nl_re = i == 0 ? re : add(nl_re, re);
    nl_im = i == 0 ? im : add(nl_im, im);
  }
  const double wl = std::sqrt(cfg.rician_k / (cfg.rician_k + 1.0));
  const double wn = std::sqrt(1.0 / (cfg.rician_k + 1.0));
  Var h_re = scale(los.re, wl), h_im = scale(los.im, wl);
  if (cfg.scatterers > 0) {
    h_re = add(h_re, scale(nl_re, wn));
    h_im = add(h_im, scale(nl_im, wn));
  }

  // Waveguide phases F_n = exp(-j 2 pi n_e y_n / lambda), [B, N_t].
  const Var fph = scale(out.pa_y, -2.0 * std::numbers::pi * cfg.refractive_index / lam);
  const Var f_re = cos(fph), f_im = sin(fph);
  const Var f_re4 = reshape(f_re, {bsz, 1, 1, n_t}), f_im4 = reshape(f_im, {bsz, 1, 1, n_t});
  const Var hf_re = sub(mul(h_re, f_re4), mul(h_im, f_im4));
  const Var hf_im = add(mul(h_re, f_im4), mul(h_im, f_re4));

  // Widened precoders [B, 2N_t, 2N_k] per user and the stacked transmit covariance factor.
  std::vector<Var> w_hat;
  for (std::size_t k = 0; k < k_users; ++k) {
    const Var wr = reshape(slice(out.w_re, 1, k, k + 1), {bsz, n_t, n_k});
    const Var wi = reshape(slice(out.w_im, 1, k, k + 1), {bsz, n_t, n_k});
    w_hat.push_back(graph::widen_batched(wr, wi));
  }
  const Var v_hat = graph::widen_batched(reshape(out.v_re, {bsz, n_t, 1}), reshape(out.v_im, {bsz, n_t, 1}));

  const Var noise_c = tape.constant(eye(2 * n_k, cfg.noise_comm));
  Var sum_rate;
  for (std::size_t k = 0; k < k_users; ++k) {
    const Var a_k = graph::widen_batched(reshape(slice(hf_re, 1, k, k + 1), {bsz, n_k, n_t}),
                                          reshape(slice(hf_im, 1, k, k + 1), {bsz, n_k, n_t}));
    std::vector<Var> all_cols, other_cols;
    for (std::size_t u = 0; u < k_users; ++u) {
      all_cols.push_back(w_hat[u]);
      if (u != k) other_cols.push_back(w_hat[u]);
    }
    all_cols.push_back(v_hat);
    other_cols.push_back(v_hat);
    const Var g1 = matmul(a_k, concat(all_cols, -1));
    const Var g2 = matmul(a_k, concat(other_cols, -1));
    const Var c1 = add(matmul(g1, transpose(g1)), noise_c);
    const Var c2 = add(matmul(g2, transpose(g2)), noise_c);
    const Var r_k = scale(sub(logdet_spd(c1), logdet_spd(c2)), 0.5 / std::numbers::ln2);
    sum_rate = k == 0 ? r_k : add(sum_rate, r_k);
  }

  // Target steering from the PAs, f_t [B, N_t].
  const Var qx = tape.constant(geo.target[0]), qy = tape.constant(geo.target[1]), qz = tape.constant(geo.target[2]);
  const Var d_t = graph::dist3(sub(tx, qx), sub(out.pa_y, qy), qz);
  const graph::ComplexVar ft = graph::spherical(d_t, lam);
  // a = F^H f_t.
  const Var a_re = add(mul(f_re, ft.re), mul(f_im, ft.im));
  const Var a_im = sub(mul(f_re, ft.im), mul(f_im, ft.re));
  // s = a^H v; |s|^2.
  const Var s_re = sum(add(mul(a_re, out.v_re), mul(a_im, out.v_im)), -1);
  const Var s_im = sum(sub(mul(a_re, out.v_im), mul(a_im, out.v_re)), -1);
  const Var echo = add(square(s_re), square(s_im));  // [B]

  // B = s_z^2 I + Y Y^T with Y = widen(f_r) widen(W^H F^H f_t)^T.
  const Var a_hat = graph::widen_batched(reshape(a_re, {bsz, n_t, 1}), reshape(a_im, {bsz, n_t, 1}));
  const Var g_hat = matmul(transpose(concat(w_hat, -1)), a_hat);  // [B, 2 K N_k, 2]
  const Var fr_re = tape.constant(geo.fr_re), fr_im = tape.constant(geo.fr_im);
  const Var fr_hat = graph::widen_batched(reshape(fr_re, {bsz, n_r, 1}), reshape(fr_im, {bsz, n_r, 1}));
  const Var y = matmul(fr_hat, transpose(g_hat));  // [B, 2N_r, 2 K N_k]
  const Var b_hat = add(matmul(y, transpose(y)), tape.constant(eye(2 * n_r, cfg.noise_sense)));
  const Var fr_stack = concat({reshape(fr_re, {bsz, n_r, 1}), reshape(fr_im, {bsz, n_r, 1})}, -2);
  const Var x = solve(b_hat, fr_stack);
  const Var quad = reshape(sum(mul(fr_stack, x), -2), {bsz});  // f_r^H B^{-1} f_r
  const Var gamma = mul(echo, quad);

  // Minimum MA spacing per user via pair differences.
  Var spacing_pen = tape.constant(Tensor(Shape{bsz}, 0.0));
  if (n_k >= 2) {
    const std::size_t pairs = n_k * (n_k - 1) / 2;
    Tensor sel(Shape{pairs, n_k});
    std::size_t p = 0;
    for (std::size_t i = 0; i < n_k; ++i) {
      for (std::size_t j = i + 1; j < n_k; ++j, ++p) {
        sel[p * n_k + i] = 1.0;
        sel[p * n_k + j] = -1.0;
      }
    }
    const Var diff = matmul(tape.constant(sel), reshape(out.ma_xy, {bsz * k_users, n_k, 2}));  // [B K, pairs, 2]
    const Var dk = min_last(norm(diff));                                                       // [B K]
    const Var viol = relu(scale(shift(dk, -cfg.d_min), -1.0));
    spacing_pen = scale(sum(reshape(viol, {bsz, k_users}), -1), cfg.nu_d);
  }
  const Var sinr_pen = scale(relu(shift(scale(gamma, -1.0), cfg.gamma0)), cfg.nu_s);

  const Var per_sample = add(sub(spacing_pen, sum_rate), sinr_pen);
  return {mean(per_sample), sum_rate, spacing_pen, sinr_pen, gamma};
}

}  // namespace pisac
