#pragma once

// Three-block convolutional policy network.
//
// Block 1: seven conv(k=3) + ELU + maxpool(2, 2) layers, 1 -> 2C -> C ... -> C channels.
// Block 2: two parallel conv(k=3) + sigmoid + global-average-pool heads giving the
//          normalized PA offsets (N_t) and MA local coordinates (2 K N_k).
// Block 3: global-average-pooled block-1 features concatenated with the block-2
//          outputs feed two dense heads: precoders (2 K N_t N_k reals, one global
//          norm scaled to sqrt(P_max)) and the sensing beam (2 N_t reals, unit norm).

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pisac/autodiff.hpp"
#include "pisac/config.hpp"
#include "pisac/errors.hpp"
#include "pisac/metrics.hpp"
#include "pisac/ops.hpp"
#include "pisac/rng.hpp"
#include "pisac/scenario.hpp"

namespace pisac {

struct NetworkConfig {
  std::size_t n_t = 0;
  std::size_t users = 0;
  std::size_t n_k = 0;
  std::size_t channels = 0;   // C
  std::size_t input_len = 0;
  std::size_t depth = 7;
  std::size_t kernel = 3;

  std::size_t pa_outputs() const { return n_t; }
  std::size_t ma_outputs() const { return 2 * users * n_k; }
  std::size_t precoder_outputs() const { return 2 * users * n_t * n_k; }
  std::size_t beam_outputs() const { return 2 * n_t; }
  std::size_t dense_inputs() const { return channels + pa_outputs() + ma_outputs(); }

  /// Sequence lengths after each block-1 layer (ceil-mode pooling).
  std::vector<std::size_t> block1_lengths() const {
    std::vector<std::size_t> l;
    std::size_t len = input_len;
    for (std::size_t i = 0; i < depth; ++i) {
      len = (len + 1) / 2;
      l.push_back(len);
    }
    return l;
  }

  static NetworkConfig from(const SystemConfig& cfg) {
    NetworkConfig n;
    n.n_t = static_cast<std::size_t>(cfg.n_t);
    n.users = static_cast<std::size_t>(cfg.users);
    n.n_k = static_cast<std::size_t>(cfg.n_k);
    n.channels = n.n_t + 2 * n.users * n.n_k + 2 * n.users * n.n_t * n.n_k + 2 * n.users * n.n_t;
    n.input_len = n.n_t + 3 * n.users + 3 * static_cast<std::size_t>(cfg.scatterers) + 3;
    return n;
  }
};

/// Flat parameter list. Order: block-1 (w, b) x depth, PA head (w, b), MA head (w, b),
/// precoder dense (w, b), beam dense (w, b).
struct NetworkParams {
  std::vector<ad::Tensor> tensors;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }
  bool operator==(const NetworkParams& o) const {
    if (tensors.size() != o.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].shape != o.tensors[i].shape || tensors[i].values != o.tensors[i].values) return false;
    }
    return true;
  }
};

/// Expected parameter shapes, in NetworkParams order.
inline std::vector<ad::Shape> param_shapes(const NetworkConfig& nc) {
  std::vector<ad::Shape> s;
  const std::size_t c = nc.channels, k = nc.kernel;
  for (std::size_t l = 0; l < nc.depth; ++l) {
    const std::size_t cin = l == 0 ? 1 : (l == 1 ? 2 * c : c);
    const std::size_t cout = l == 0 ? 2 * c : c;
    s.push_back({cout, cin, k});
    s.push_back({cout});
  }
  s.push_back({nc.pa_outputs(), c, k});
  s.push_back({nc.pa_outputs()});
  s.push_back({nc.ma_outputs(), c, k});
  s.push_back({nc.ma_outputs()});
  s.push_back({nc.dense_inputs(), nc.precoder_outputs()});
  s.push_back({nc.precoder_outputs()});
  s.push_back({nc.dense_inputs(), nc.beam_outputs()});
  s.push_back({nc.beam_outputs()});
  return s;
}

/// Glorot-uniform bound sqrt(6 / (fan_in + fan_out)) for a weight shape.
inline double glorot_bound(const ad::Shape& s) {
  double fan_in = 0, fan_out = 0;
  if (s.size() == 3) {
    fan_in = static_cast<double>(s[1] * s[2]);
    fan_out = static_cast<double>(s[0] * s[2]);
  } else {
    fan_in = static_cast<double>(s[0]);
    fan_out = static_cast<double>(s[1]);
  }
  return std::sqrt(6.0 / (fan_in + fan_out));
}

/// Glorot-uniform weights, zero biases; deterministic per seed.
inline NetworkParams init_params(const NetworkConfig& nc, std::uint64_t seed) {
  Rng rng(seed);
  NetworkParams p;
  for (const auto& s : param_shapes(nc)) {
    ad::Tensor t(s);
    if (s.size() > 1) {
      const double a = glorot_bound(s);
      for (auto& x : t.values) x = rng.uniform(-a, a);
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

inline void check_params(const NetworkParams& p, const NetworkConfig& nc) {
  const auto shapes = param_shapes(nc);
  if (p.tensors.size() != shapes.size()) throw DimensionError("network: wrong parameter count");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (p.tensors[i].shape != shapes[i]) {
      throw DimensionError("network: parameter " + std::to_string(i) + " has shape " +
                           ad::shape_str(p.tensors[i].shape) + ", expected " + ad::shape_str(shapes[i]));
    }
  }
}

// ---------------------------------------------------------------------------
// Input assembly

namespace detail {

inline double normalize(double e, double lo, double hi, const char* what) {
  if (!(e >= lo && e <= hi)) throw GeometryError(std::string("assemble_and_preprocess: ") + what + " outside its box");
  return hi > lo ? (e - lo) / (hi - lo) : 0.0;
}

}  // namespace detail

/// [y_t grid (N_t), b_k (3K), xi_i (3L), q_p (3)], each min-max normalized by its
/// feasible interval. The y_t entry is the uniform reference grid.
inline std::vector<double> assemble_and_preprocess(const Scenario& sc, const SystemConfig& cfg) {
  std::vector<double> x;
  x.reserve(static_cast<std::size_t>(cfg.n_t + 3 * cfg.users + 3 * cfg.scatterers + 3));
  for (double y : PAPlacement::grid(cfg).y) x.push_back(detail::normalize(y, 0.0, cfg.d_t, "y_t"));
  if (static_cast<int>(sc.user_origins.size()) != cfg.users || static_cast<int>(sc.scatterers.size()) != cfg.scatterers) {
    throw DimensionError("assemble_and_preprocess: scenario does not match the configuration");
  }
  for (int k = 0; k < cfg.users; ++k) {
    for (int a = 0; a < 3; ++a) {
      x.push_back(detail::normalize(sc.user_origins[k][a], cfg.user_boxes[k].lo[a], cfg.user_boxes[k].hi[a], "user origin"));
    }
  }
  for (const auto& s : sc.scatterers) {
    for (int a = 0; a < 3; ++a) x.push_back(detail::normalize(s[a], cfg.scatterer_box.lo[a], cfg.scatterer_box.hi[a], "scatterer"));
  }
  for (int a = 0; a < 3; ++a) x.push_back(detail::normalize(sc.target[a], cfg.target_box.lo[a], cfg.target_box.hi[a], "target"));
  return x;
}

/// Stacks preprocessed scenarios into a [B, 1, L] tensor.
inline ad::Tensor batch_inputs(const std::vector<const Scenario*>& batch, const SystemConfig& cfg) {
  const std::size_t len = NetworkConfig::from(cfg).input_len;
  ad::Tensor t(ad::Shape{batch.size(), 1, len});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto x = assemble_and_preprocess(*batch[b], cfg);
    std::copy(x.begin(), x.end(), t.values.begin() + static_cast<std::ptrdiff_t>(b * len));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Network outputs for a batch of B scenarios.
struct NetworkOutput {
  ad::Var pa_y;   // [B, N_t] in metres
  ad::Var ma_xy;  // [B, K, N_k, 2] local coordinates in metres
  ad::Var w_re;   // [B, K, N_t, N_k]
  ad::Var w_im;   // [B, K, N_t, N_k]
  ad::Var v_re;   // [B, N_t]
  ad::Var v_im;   // [B, N_t]
};

/// Normalized Fix-Ant positions: uniform PA grid and a centered ULA along y per user.
inline ad::Tensor fixed_positions_normalized(const SystemConfig& cfg, std::size_t batch) {
  const PAPlacement pa = PAPlacement::grid(cfg);
  const MAPlacement ma = MAPlacement::fixed_ula(cfg);
  std::vector<double> row;
  for (double y : pa.y) row.push_back(y / cfg.d_t);
  for (const auto& p : ma.local) {
    row.push_back(p[0] / cfg.d_k);
    row.push_back(p[1] / cfg.d_k);
  }
  ad::Tensor t(ad::Shape{batch, row.size()});
  for (std::size_t b = 0; b < batch; ++b) std::copy(row.begin(), row.end(), t.values.begin() + static_cast<std::ptrdiff_t>(b * row.size()));
  return t;
}

/// Runs the network on `input` ([B, 1, L]). `params` are tape variables in NetworkParams order.
inline NetworkOutput forward(const ad::Var& input, const std::vector<ad::Var>& params, const SystemConfig& cfg,
                             Variant variant) {
  using namespace ad;
  const NetworkConfig nc = NetworkConfig::from(cfg);
  if (params.size() != 2 * nc.depth + 8) throw DimensionError("forward: wrong parameter count");
  const Shape& in_shape = input.shape();
  if (in_shape.size() != 3 || in_shape[1] != 1 || in_shape[2] != nc.input_len) {
    throw DimensionError("forward: input must be [B, 1, " + std::to_string(nc.input_len) + "], got " + shape_str(in_shape));
  }
  Tape& tape = input.tape();
  const std::size_t bsz = in_shape[0];
  const std::size_t k_users = nc.users, n_t = nc.n_t, n_k = nc.n_k;

  Var h = input;
  for (std::size_t l = 0; l < nc.depth; ++l) h = maxpool1d(elu(conv1d(h, params[2 * l], params[2 * l + 1])));
  const std::size_t o = 2 * nc.depth;

  Var pa_norm, ma_norm;  // [B, N_t], [B, 2 K N_k], in [0, 1]
  if (variant == Variant::kProposed) {
    pa_norm = global_avg_pool(sigmoid(conv1d(h, params[o], params[o + 1])));
    ma_norm = global_avg_pool(sigmoid(conv1d(h, params[o + 2], params[o + 3])));
  } else {
    const Tensor fixed = fixed_positions_normalized(cfg, bsz);
    const Var f = tape.constant(fixed);
    pa_norm = slice(f, 1, 0, n_t);
    ma_norm = slice(f, 1, n_t, n_t + nc.ma_outputs());
  }

  const Var feat = concat({global_avg_pool(h), pa_norm, ma_norm}, 1);
  const Var pw = add(matmul(feat, params[o + 4]), params[o + 5]);  // [B, 2 K N_t N_k]
  const Var pv = add(matmul(feat, params[o + 6]), params[o + 7]);  // [B, 2 N_t]

  const Var pw_unit = mul(pw, reshape(reciprocal(norm(pw)), {bsz, 1}));
  const Var w = scale(pw_unit, std::sqrt(cfg.p_max));
  const Var v = mul(pv, reshape(reciprocal(norm(pv)), {bsz, 1}));

  const std::size_t half = k_users * n_t * n_k;
  NetworkOutput out;
  out.pa_y = scale(pa_norm, cfg.d_t);
  out.ma_xy = scale(reshape(ma_norm, {bsz, k_users, n_k, 2}), cfg.d_k);
  out.w_re = reshape(slice(w, 1, 0, half), {bsz, k_users, n_t, n_k});
  out.w_im = reshape(slice(w, 1, half, 2 * half), {bsz, k_users, n_t, n_k});
  out.v_re = slice(v, 1, 0, n_t);
  out.v_im = slice(v, 1, n_t, 2 * n_t);
  return out;
}

/// Records every parameter tensor on `tape` as a differentiable leaf.
inline std::vector<ad::Var> param_leaves(ad::Tape& tape, const NetworkParams& p) {
  std::vector<ad::Var> v;
  v.reserve(p.tensors.size());
  for (const auto& t : p.tensors) v.push_back(tape.leaf(t));
  return v;
}

/// Plain placements and beamformers for batch element `b`.
struct Decision {
  PAPlacement pa;
  MAPlacement ma;
  BeamformingSet beams;
};

inline Decision extract(const NetworkOutput& out, std::size_t b, const SystemConfig& cfg) {
  const std::size_t n_t = static_cast<std::size_t>(cfg.n_t), n_k = static_cast<std::size_t>(cfg.n_k);
  const std::size_t k_users = static_cast<std::size_t>(cfg.users);
  Decision d;
  const auto& y = out.pa_y.value();
  for (std::size_t n = 0; n < n_t; ++n) d.pa.y.push_back(y[b * n_t + n]);
  d.ma = {cfg.users, cfg.n_k, {}};
  const auto& m = out.ma_xy.value();
  const std::size_t per = k_users * n_k * 2;
  for (std::size_t i = 0; i < k_users * n_k; ++i) d.ma.local.push_back({m[b * per + 2 * i], m[b * per + 2 * i + 1]});
  const auto& wr = out.w_re.value();
  const auto& wi = out.w_im.value();
  const std::size_t wper = k_users * n_t * n_k;
  for (std::size_t k = 0; k < k_users; ++k) {
    CMatrix w = CMatrix::zero(cfg.n_t, cfg.n_k);
    for (std::size_t n = 0; n < n_t; ++n) {
      for (std::size_t j = 0; j < n_k; ++j) {
        const std::size_t idx = b * wper + (k * n_t + n) * n_k + j;
        w.re(n, j) = wr[idx];
        w.im(n, j) = wi[idx];
      }
    }
    d.beams.w.push_back(std::move(w));
  }
  d.beams.v = CMatrix::zero(cfg.n_t, 1);
  for (std::size_t n = 0; n < n_t; ++n) {
    d.beams.v.re(n, 0) = out.v_re.value()[b * n_t + n];
    d.beams.v.im(n, 0) = out.v_im.value()[b * n_t + n];
  }
  return d;
}

}  // namespace pisac
