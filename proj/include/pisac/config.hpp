#pragma once

// System and training configuration, plus the flat `key = value` text
// format used for config files and the checkpoint config block.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pisac/errors.hpp"

namespace pisac {

using Vec3 = std::array<double, 3>;

/// Axis-aligned box [lo, hi] per axis.
struct Box {
  Vec3 lo{};
  Vec3 hi{};

  bool contains(const Vec3& p) const {
    for (int a = 0; a < 3; ++a) {
      if (p[a] < lo[a] || p[a] > hi[a]) return false;
    }
    return true;
  }
  bool valid() const {
    for (int a = 0; a < 3; ++a) {
      if (!(lo[a] <= hi[a])) return false;
    }
    return true;
  }
};

inline constexpr double kSpeedOfLight = 299792458.0;

/// Physical constants of one deployment. Defaults are the reference
/// deployment: 5 GHz carrier, 6 waveguides, 4 receive antennas, two users
/// with three movable antennas each, two scatterers.
struct SystemConfig {
  double wavelength = 0.06;       // m
  double refractive_index = 1.4;  // n_e of the dielectric waveguide
  int n_t = 6;                    // waveguides, one pinching antenna each
  int n_r = 4;                    // receive array elements
  int n_k = 3;                    // movable antennas per user
  int users = 2;                  // K
  int scatterers = 2;             // L
  double d_t = 10.0;              // waveguide length (m)
  double d_r = 0.30;              // receive array length (m)
  double d_k = 0.15;              // movable-antenna region side (m)
  double d_min = 0.03;            // minimum inter-antenna spacing (m)
  double rician_k = 2.0;
  double noise_comm = 1e-12;   // sigma_c^2 (W)
  double noise_sense = 1e-12;  // sigma_z^2 (W)
  double p_max = 1.0;          // W
  double gamma0 = 0.01;        // sensing SINR threshold
  double nu_s = 1000.0;        // sensing penalty weight
  double nu_d = 100.0;         // spacing penalty weight (same for all users)
  Vec3 rx_mid{20.0, 20.0, 1.0};
  std::vector<Box> user_boxes{Box{{-5, -5, 5}, {-3, -3, 10}}, Box{{-5, 13, 5}, {-3, 15, 10}}};
  Box target_box{{12, 0, 1}, {15, 5, 5}};
  Box scatterer_box{{-2, 3, 0}, {0, 7, 3}};

  double carrier_hz() const { return kSpeedOfLight / wavelength; }

  /// Throws ConfigError on the first violated invariant.
  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("SystemConfig: " + m); };
    if (!(wavelength > 0)) fail("wavelength must be > 0");
    if (!(refractive_index > 0)) fail("refractive_index must be > 0");
    if (n_t < 2) fail("n_t must be >= 2");
    if (n_r < 2) fail("n_r must be >= 2");
    if (n_k < 1) fail("n_k must be >= 1");
    if (users < 1) fail("users must be >= 1");
    if (scatterers < 1) fail("scatterers must be >= 1");
    if (!(d_t > 0 && d_r > 0 && d_k > 0)) fail("lengths must be > 0");
    if (!(d_min > 0 && d_min <= d_k)) fail("d_min must satisfy 0 < d_min <= d_k");
    if (!(rician_k >= 0)) fail("rician_k must be >= 0");
    if (!(noise_comm > 0 && noise_sense > 0)) fail("noise variances must be > 0");
    if (!(p_max > 0)) fail("p_max must be > 0");
    if (!(gamma0 >= 0)) fail("gamma0 must be >= 0");
    if (!(nu_s >= 0 && nu_d >= 0)) fail("penalty weights must be >= 0");
    if (static_cast<int>(user_boxes.size()) < users) fail("missing user_box entries");
    for (const auto& b : user_boxes) {
      if (!b.valid()) fail("user box has min > max");
    }
    if (!target_box.valid()) fail("target box has min > max");
    if (!scatterer_box.valid()) fail("scatterer box has min > max");
  }
};

enum class Variant { kProposed, kFixAnt };

inline std::string to_string(Variant v) { return v == Variant::kProposed ? "proposed" : "fix-ant"; }

inline Variant parse_variant(std::string_view s) {
  if (s == "proposed") return Variant::kProposed;
  if (s == "fix-ant") return Variant::kFixAnt;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected proposed|fix-ant)");
}

struct TrainConfig {
  int train_size = 2000;
  int test_size = 500;
  int batch_size = 50;
  int epochs = 300;
  double learning_rate = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;  // master seed; data, init and shuffle streams derive from it
  int replicates = 1;      // sweeps average over seeds seed, seed+1, ...
  Variant variant = Variant::kProposed;
  std::vector<double> pmax_list{0.01, 0.1, 1.0};
  std::vector<double> gamma_list{0.001, 0.01, 0.05};

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("TrainConfig: " + m); };
    if (train_size < 1 || test_size < 1) fail("dataset sizes must be >= 1");
    if (batch_size < 1 || batch_size > train_size) fail("batch_size must be in [1, train_size]");
    if (epochs < 0) fail("epochs must be >= 0");
    if (!(learning_rate > 0)) fail("learning_rate must be > 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) fail("Adam betas must be in [0, 1)");
    if (!(adam_eps > 0)) fail("adam_eps must be > 0");
    if (replicates < 1) fail("replicates must be >= 1");
    for (double p : pmax_list) {
      if (!(p > 0)) fail("pmax_list entries must be > 0");
    }
    for (double g : gamma_list) {
      if (!(g >= 0)) fail("gamma_list entries must be >= 0");
    }
  }
};

struct ExperimentConfig {
  SystemConfig system;
  TrainConfig train;

  void validate() const {
    system.validate();
    train.validate();
  }
};

// ---------------------------------------------------------------------------
// Text format

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end || !std::isfinite(out)) {
    throw ConfigError("'" + key + "': not a finite number: '" + v + "'");
  }
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("'" + key + "': not an integer: '" + v + "'");
  return out;
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw ConfigError("'" + key + "': empty list");
  return out;
}

inline Vec3 parse_vec3(const std::string& key, const std::string& v) {
  const auto xs = parse_list(key, v);
  if (xs.size() != 3) throw ConfigError("'" + key + "': expected 3 values");
  return {xs[0], xs[1], xs[2]};
}

/// Boxes are written xmin,xmax,ymin,ymax,zmin,zmax.
inline Box parse_box(const std::string& key, const std::string& v) {
  const auto xs = parse_list(key, v);
  if (xs.size() != 6) throw ConfigError("'" + key + "': expected 6 values");
  return Box{{xs[0], xs[2], xs[4]}, {xs[1], xs[3], xs[5]}};
}

inline std::string fmt(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);  // shortest round-trip form
  return std::string(buf, r.ptr);
}

inline std::string fmt_list(const std::vector<double>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + fmt(xs[i]);
  return s;
}

inline std::string fmt_box(const Box& b) {
  return fmt_list({b.lo[0], b.hi[0], b.lo[1], b.hi[1], b.lo[2], b.hi[2]});
}

}  // namespace detail

/// Parses `key = value` lines ('#' starts a comment). Unknown keys are errors.
inline ExperimentConfig parse_config(std::istream& in) {
  using namespace detail;
  ExperimentConfig cfg;
  auto& s = cfg.system;
  auto& t = cfg.train;
  std::map<std::string, std::string> seen;
  std::vector<std::pair<int, Box>> user_boxes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    const std::string val = trim(body.substr(eq + 1));
    if (!seen.emplace(key, val).second) throw ConfigError("duplicate key '" + key + "'");

    auto as_int = [&] { return static_cast<int>(parse_int(key, val)); };
    auto as_double = [&] { return parse_double(key, val); };

    if (key == "wavelength") s.wavelength = as_double();
    else if (key == "carrier_hz") s.wavelength = kSpeedOfLight / as_double();
    else if (key == "refractive_index") s.refractive_index = as_double();
    else if (key == "n_t") s.n_t = as_int();
    else if (key == "n_r") s.n_r = as_int();
    else if (key == "n_k") s.n_k = as_int();
    else if (key == "users") s.users = as_int();
    else if (key == "scatterers") s.scatterers = as_int();
    else if (key == "d_t") s.d_t = as_double();
    else if (key == "d_r") s.d_r = as_double();
    else if (key == "d_k") s.d_k = as_double();
    else if (key == "d_min") s.d_min = as_double();
    else if (key == "rician_k") s.rician_k = as_double();
    else if (key == "noise_comm") s.noise_comm = as_double();
    else if (key == "noise_sense") s.noise_sense = as_double();
    else if (key == "p_max") s.p_max = as_double();
    else if (key == "gamma0") s.gamma0 = as_double();
    else if (key == "nu_s") s.nu_s = as_double();
    else if (key == "nu_d") s.nu_d = as_double();
    else if (key == "rx_mid") s.rx_mid = parse_vec3(key, val);
    else if (key == "target_box") s.target_box = parse_box(key, val);
    else if (key == "scatterer_box") s.scatterer_box = parse_box(key, val);
    else if (key.rfind("user_box_", 0) == 0) {
      const int idx = static_cast<int>(parse_int(key, key.substr(9)));
      if (idx < 1) throw ConfigError("'" + key + "': user boxes are numbered from 1");
      user_boxes.emplace_back(idx, parse_box(key, val));
    }
    else if (key == "train_size") t.train_size = as_int();
    else if (key == "test_size") t.test_size = as_int();
    else if (key == "batch_size") t.batch_size = as_int();
    else if (key == "epochs") t.epochs = as_int();
    else if (key == "learning_rate") t.learning_rate = as_double();
    else if (key == "adam_beta1") t.adam_beta1 = as_double();
    else if (key == "adam_beta2") t.adam_beta2 = as_double();
    else if (key == "adam_eps") t.adam_eps = as_double();
    else if (key == "seed") {
      const auto v = parse_int(key, val);
      if (v < 0) throw ConfigError("'seed' must be >= 0");
      t.seed = static_cast<std::uint64_t>(v);
    }
    else if (key == "replicates") t.replicates = as_int();
    else if (key == "variant") t.variant = parse_variant(val);
    else if (key == "pmax_list") t.pmax_list = parse_list(key, val);
    else if (key == "gamma_list") t.gamma_list = parse_list(key, val);
    else throw ConfigError("unknown key '" + key + "'");
  }
  if (seen.count("wavelength") && seen.count("carrier_hz")) {
    throw ConfigError("give either wavelength or carrier_hz, not both");
  }
  if (!user_boxes.empty()) {
    std::sort(user_boxes.begin(), user_boxes.end(), [](auto& a, auto& b) { return a.first < b.first; });
    s.user_boxes.clear();
    for (std::size_t i = 0; i < user_boxes.size(); ++i) {
      if (user_boxes[i].first != static_cast<int>(i) + 1) throw ConfigError("user_box_N keys must be numbered 1..K");
      s.user_boxes.push_back(user_boxes[i].second);
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

/// Writes every key; parse_config(write_config(c)) reproduces c exactly.
inline std::string write_config(const ExperimentConfig& cfg) {
  using namespace detail;
  const auto& s = cfg.system;
  const auto& t = cfg.train;
  std::ostringstream o;
  o << "wavelength = " << fmt(s.wavelength) << "\n"
    << "refractive_index = " << fmt(s.refractive_index) << "\n"
    << "n_t = " << s.n_t << "\n"
    << "n_r = " << s.n_r << "\n"
    << "n_k = " << s.n_k << "\n"
    << "users = " << s.users << "\n"
    << "scatterers = " << s.scatterers << "\n"
    << "d_t = " << fmt(s.d_t) << "\n"
    << "d_r = " << fmt(s.d_r) << "\n"
    << "d_k = " << fmt(s.d_k) << "\n"
    << "d_min = " << fmt(s.d_min) << "\n"
    << "rician_k = " << fmt(s.rician_k) << "\n"
    << "noise_comm = " << fmt(s.noise_comm) << "\n"
    << "noise_sense = " << fmt(s.noise_sense) << "\n"
    << "p_max = " << fmt(s.p_max) << "\n"
    << "gamma0 = " << fmt(s.gamma0) << "\n"
    << "nu_s = " << fmt(s.nu_s) << "\n"
    << "nu_d = " << fmt(s.nu_d) << "\n"
    << "rx_mid = " << fmt_list({s.rx_mid[0], s.rx_mid[1], s.rx_mid[2]}) << "\n";
  for (std::size_t i = 0; i < s.user_boxes.size(); ++i) {
    o << "user_box_" << i + 1 << " = " << fmt_box(s.user_boxes[i]) << "\n";
  }
  o << "target_box = " << fmt_box(s.target_box) << "\n"
    << "scatterer_box = " << fmt_box(s.scatterer_box) << "\n"
    << "train_size = " << t.train_size << "\n"
    << "test_size = " << t.test_size << "\n"
    << "batch_size = " << t.batch_size << "\n"
    << "epochs = " << t.epochs << "\n"
    << "learning_rate = " << fmt(t.learning_rate) << "\n"
    << "adam_beta1 = " << fmt(t.adam_beta1) << "\n"
    << "adam_beta2 = " << fmt(t.adam_beta2) << "\n"
    << "adam_eps = " << fmt(t.adam_eps) << "\n"
    << "seed = " << t.seed << "\n"
    << "replicates = " << t.replicates << "\n"
    << "variant = " << to_string(t.variant) << "\n"
    << "pmax_list = " << fmt_list(t.pmax_list) << "\n"
    << "gamma_list = " << fmt_list(t.gamma_list) << "\n";
  return o.str();
}

}  // namespace pisac
