#pragma once

// Geometry and channel synthesis.
//
// Coordinates: the waveguides lie in the xy-plane parallel to the y-axis,
// waveguide n at x = n * D_t / (N_t - 1). The receive array is parallel to
// the y-axis and centered at rx_mid. Movable-antenna regions are squares
// [0, D_k]^2 parallel to the xy-plane, anchored at each user's origin.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pisac/config.hpp"
#include "pisac/errors.hpp"
#include "pisac/rng.hpp"
#include "pisac/widened.hpp"

namespace pisac {

inline constexpr double kPi = std::numbers::pi;

inline double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// One sampled environment.
struct Scenario {
  std::vector<Vec3> user_origins;  // b_k, one per user
  std::vector<Vec3> scatterers;    // xi_i
  Vec3 target{};                   // q_p

  bool operator==(const Scenario&) const = default;
};

/// Pinching-antenna offsets along their waveguides.
struct PAPlacement {
  std::vector<double> y;

  /// Uniform grid y_n = n * D_t / (N_t - 1), n = 0..N_t-1.
  static PAPlacement grid(const SystemConfig& cfg) {
    PAPlacement p;
    p.y.resize(cfg.n_t);
    for (int n = 0; n < cfg.n_t; ++n) p.y[n] = n * cfg.d_t / (cfg.n_t - 1);
    return p;
  }

  bool valid(const SystemConfig& cfg) const {
    if (static_cast<int>(y.size()) != cfg.n_t) return false;
    for (double v : y) {
      if (!(v >= 0.0 && v <= cfg.d_t)) return false;
    }
    return true;
  }

  std::vector<Vec3> positions(const SystemConfig& cfg) const {
    std::vector<Vec3> t(y.size());
    for (std::size_t n = 0; n < y.size(); ++n) t[n] = {n * cfg.d_t / (cfg.n_t - 1), y[n], 0.0};
    return t;
  }
};

/// Local (x, y) coordinates of every movable antenna, user-major.
struct MAPlacement {
  int users = 0;
  int per_user = 0;
  std::vector<std::array<double, 2>> local;  // index k * per_user + b

  const std::array<double, 2>& at(int k, int b) const { return local[k * per_user + b]; }

  /// Fixed linear array parallel to the y-axis, centered in x.
  static MAPlacement fixed_ula(const SystemConfig& cfg) {
    MAPlacement m{cfg.users, cfg.n_k, {}};
    m.local.resize(static_cast<std::size_t>(cfg.users) * cfg.n_k);
    for (int k = 0; k < cfg.users; ++k) {
      for (int b = 0; b < cfg.n_k; ++b) {
        const double y = cfg.n_k > 1 ? b * cfg.d_k / (cfg.n_k - 1) : 0.5 * cfg.d_k;
        m.local[k * cfg.n_k + b] = {0.5 * cfg.d_k, y};
      }
    }
    return m;
  }

  bool valid(const SystemConfig& cfg) const {
    if (users != cfg.users || per_user != cfg.n_k) return false;
    if (local.size() != static_cast<std::size_t>(users) * per_user) return false;
    for (const auto& p : local) {
      for (double v : p) {
        if (!(v >= 0.0 && v <= cfg.d_k)) return false;
      }
    }
    return true;
  }

  /// Global positions u_{k,b} = local + b_k of user k.
  std::vector<Vec3> positions(int k, const Scenario& sc) const {
    std::vector<Vec3> u(per_user);
    const auto& o = sc.user_origins.at(k);
    for (int b = 0; b < per_user; ++b) u[b] = {at(k, b)[0] + o[0], at(k, b)[1] + o[1], o[2]};
    return u;
  }
};

/// Receive array element positions, spaced D_r / (N_r - 1) along y.
inline std::vector<Vec3> receive_positions(const SystemConfig& cfg) {
  std::vector<Vec3> r(cfg.n_r);
  for (int m = 0; m < cfg.n_r; ++m) {
    const double off = -0.5 * cfg.d_r + m * cfg.d_r / (cfg.n_r - 1);
    r[m] = {cfg.rx_mid[0], cfg.rx_mid[1] + off, cfg.rx_mid[2]};
  }
  return r;
}

inline Vec3 sample_point(Rng& rng, const Box& box) {
  Vec3 p;
  for (int a = 0; a < 3; ++a) p[a] = rng.uniform(box.lo[a], box.hi[a]);
  return p;
}

/// Draws every coordinate uniformly from its box.
inline Scenario sample_scenario(const SystemConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Scenario sc;
  sc.user_origins.reserve(cfg.users);
  for (int k = 0; k < cfg.users; ++k) sc.user_origins.push_back(sample_point(rng, cfg.user_boxes.at(k)));
  sc.scatterers.reserve(cfg.scatterers);
  for (int i = 0; i < cfg.scatterers; ++i) sc.scatterers.push_back(sample_point(rng, cfg.scatterer_box));
  sc.target = sample_point(rng, cfg.target_box);
  return sc;
}

inline bool scenario_in_boxes(const Scenario& sc, const SystemConfig& cfg) {
  if (static_cast<int>(sc.user_origins.size()) != cfg.users) return false;
  if (static_cast<int>(sc.scatterers.size()) != cfg.scatterers) return false;
  for (int k = 0; k < cfg.users; ++k) {
    if (!cfg.user_boxes[k].contains(sc.user_origins[k])) return false;
  }
  for (const auto& s : sc.scatterers) {
    if (!cfg.scatterer_box.contains(s)) return false;
  }
  return cfg.target_box.contains(sc.target);
}

// ---------------------------------------------------------------------------
// Channels

/// Diagonal waveguide propagation matrix, F(n,n) = exp(-j 2 pi y_n n_e / lambda).
inline CMatrix waveguide_matrix(const PAPlacement& pa, const SystemConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(pa.y.size());
  CMatrix f = CMatrix::zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double phase = -2.0 * kPi * pa.y[i] * cfg.refractive_index / cfg.wavelength;
    f.re(i, i) = std::cos(phase);
    f.im(i, i) = std::sin(phase);
  }
  return f;
}

/// Free-space line-of-sight coefficient: lambda / (4 pi d) * exp(-j 2 pi d / lambda).
inline CScalar los_channel(const Vec3& t, const Vec3& u, double wavelength) {
  const double d = distance(t, u);
  if (!(d > 0.0)) throw GeometryError("los_channel: coincident endpoints");
  return CScalar::polar(wavelength / (4.0 * kPi * d), -2.0 * kPi * d / wavelength);
}

/// Single-bounce scattered coefficient summed over all scatterers.
inline CScalar nlos_channel(const Vec3& t, const Vec3& u, std::span<const Vec3> scatterers, double wavelength) {
  CScalar h;
  for (const auto& xi : scatterers) {
    const double dt = distance(t, xi);
    const double du = distance(u, xi);
    if (!(dt > 0.0 && du > 0.0)) throw GeometryError("nlos_channel: endpoint coincides with a scatterer");
    h = h + CScalar::polar(wavelength / (4.0 * kPi) / (dt * du), -2.0 * kPi * (du - dt) / wavelength);
  }
  return h;
}

/// Rician channel H_k (N_k x N_t) between the transmitter and user k.
inline CMatrix user_channel(int k, const PAPlacement& pa, const MAPlacement& ma, const Scenario& sc,
                            const SystemConfig& cfg) {
  const auto t = pa.positions(cfg);
  const auto u = ma.positions(k, sc);
  const double w_los = std::sqrt(cfg.rician_k / (cfg.rician_k + 1.0));
  const double w_nlos = std::sqrt(1.0 / (cfg.rician_k + 1.0));
  CMatrix h = CMatrix::zero(static_cast<Eigen::Index>(u.size()), static_cast<Eigen::Index>(t.size()));
  for (std::size_t b = 0; b < u.size(); ++b) {
    for (std::size_t n = 0; n < t.size(); ++n) {
      const CScalar los = los_channel(t[n], u[b], cfg.wavelength);
      const CScalar nlos = nlos_channel(t[n], u[b], sc.scatterers, cfg.wavelength);
      h.set(b, n, w_los * los + w_nlos * nlos);
    }
  }
  return h;
}

/// Column vector of target responses, entry m = lambda/(4 pi d_m) exp(-j 2 pi d_m / lambda).
inline CMatrix target_steering(std::span<const Vec3> positions, const Vec3& target, double wavelength) {
  CMatrix f = CMatrix::zero(static_cast<Eigen::Index>(positions.size()), 1);
  for (std::size_t m = 0; m < positions.size(); ++m) {
    const double d = distance(positions[m], target);
    if (!(d > 0.0)) throw GeometryError("target_steering: target coincides with an antenna");
    f.set(m, 0, CScalar::polar(wavelength / (4.0 * kPi * d), -2.0 * kPi * d / wavelength));
  }
  return f;
}

/// Rank-one point-target channel G = f_r f_t^H.
inline CMatrix sensing_channel(const CMatrix& f_t, const CMatrix& f_r) {
  if (f_t.cols() != 1 || f_r.cols() != 1) throw DimensionError("sensing_channel: expects column vectors");
  return cmul(f_r, adjoint(f_t));
}

/// Every channel quantity for one (placement, scenario) pair.
struct ChannelSet {
  CMatrix f;               // N_t x N_t waveguide matrix
  std::vector<CMatrix> h;  // per user, N_k x N_t
  CMatrix f_t;             // N_t x 1
  CMatrix f_r;             // N_r x 1
  CMatrix g;               // N_r x N_t
};

inline ChannelSet synthesize_channels(const PAPlacement& pa, const MAPlacement& ma, const Scenario& sc,
                                      const SystemConfig& cfg) {
  if (!pa.valid(cfg)) throw GeometryError("synthesize_channels: PA placement outside [0, D_t]");
  if (!ma.valid(cfg)) throw GeometryError("synthesize_channels: MA placement outside [0, D_k]^2");
  ChannelSet ch;
  ch.f = waveguide_matrix(pa, cfg);
  ch.h.reserve(cfg.users);
  for (int k = 0; k < cfg.users; ++k) ch.h.push_back(user_channel(k, pa, ma, sc, cfg));
  const auto t = pa.positions(cfg);
  const auto r = receive_positions(cfg);
  ch.f_t = target_steering(t, sc.target, cfg.wavelength);
  ch.f_r = target_steering(r, sc.target, cfg.wavelength);
  ch.g = sensing_channel(ch.f_t, ch.f_r);
  return ch;
}

}  // namespace pisac
