#pragma once

// Experiment drivers shared by the CLI and the acceptance runner: single runs,
// power and SINR-threshold sweeps, results.json and the CSV report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pisac/checkpoint.hpp"
#include "pisac/config.hpp"
#include "pisac/scenario.hpp"
#include "pisac/trainer.hpp"

namespace pisac {

using Json = nlohmann::ordered_json;
using LogFn = std::function<void(const std::string&)>;

inline constexpr const char* kHistoryHeader = "epoch,mean_loss,mean_sum_rate,spacing_penalty,sinr_penalty";
inline constexpr const char* kSweepPowerHeader = "p_max_w,variant,mean_sum_rate,sinr_satisfaction";
inline constexpr const char* kSweepGammaHeader = "gamma0,mean_sum_rate,mean_ps,sinr_satisfaction";

/// Report number format: 12 significant digits.
inline std::string fmt12(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// Runs

struct RunResult {
  Variant variant = Variant::kProposed;
  std::uint64_t seed = 0;
  TrainResult train;
  EvalSummary eval;
};

/// Generates the seed's datasets, trains and evaluates on the test set.
inline RunResult run_experiment(const ExperimentConfig& cfg, Variant variant, const LogFn& log = {},
                                int log_every = 25) {
  cfg.validate();
  const auto train_set = make_train_set(cfg.system, cfg.train);
  const auto test_set = make_test_set(cfg.system, cfg.train);
  RunResult r;
  r.variant = variant;
  r.seed = cfg.train.seed;
  EpochCallback cb;
  if (log) {
    cb = [&](const EpochStats& e) {
      if (e.epoch % log_every == 0 || e.epoch == cfg.train.epochs) {
        log(to_string(variant) + " seed " + std::to_string(cfg.train.seed) + " epoch " + std::to_string(e.epoch) +
            "/" + std::to_string(cfg.train.epochs) + " loss " + fmt12(e.mean_loss) + " sum-rate " +
            fmt12(e.mean_sum_rate));
      }
    };
  }
  r.train = train(cfg.system, cfg.train, variant, train_set, cb);
  r.eval = evaluate(r.train.params, cfg.system, variant, test_set);
  return r;
}

/// Replicate i uses master seed cfg.train.seed + i.
inline std::vector<RunResult> run_replicates(const ExperimentConfig& cfg, Variant variant, const LogFn& log = {}) {
  std::vector<RunResult> out;
  for (int i = 0; i < cfg.train.replicates; ++i) {
    ExperimentConfig c = cfg;
    c.train.seed = cfg.train.seed + static_cast<std::uint64_t>(i);
    out.push_back(run_experiment(c, variant, log));
  }
  return out;
}

struct PowerPoint {
  double p_max_w = 0.0;
  Variant variant = Variant::kProposed;
  double mean_sum_rate = 0.0;
  double sinr_satisfaction = 0.0;
};

struct GammaPoint {
  double gamma0 = 0.0;
  double mean_sum_rate = 0.0;
  double mean_ps = 0.0;
  double sinr_satisfaction = 0.0;
};

inline PowerPoint power_point(double p_max, Variant v, const std::vector<RunResult>& runs) {
  PowerPoint p{p_max, v, 0.0, 0.0};
  for (const auto& r : runs) {
    p.mean_sum_rate += r.eval.mean_sum_rate;
    p.sinr_satisfaction += r.eval.sinr_satisfaction;
  }
  p.mean_sum_rate /= static_cast<double>(runs.size());
  p.sinr_satisfaction /= static_cast<double>(runs.size());
  return p;
}

inline GammaPoint gamma_point(double gamma0, const std::vector<RunResult>& runs) {
  GammaPoint g{gamma0, 0.0, 0.0, 0.0};
  for (const auto& r : runs) {
    g.mean_sum_rate += r.eval.mean_sum_rate;
    g.mean_ps += r.eval.mean_ps;
    g.sinr_satisfaction += r.eval.sinr_satisfaction;
  }
  const double n = static_cast<double>(runs.size());
  g.mean_sum_rate /= n;
  g.mean_ps /= n;
  g.sinr_satisfaction /= n;
  return g;
}

/// Both variants at every transmit power, averaged over replicates.
inline std::vector<PowerPoint> sweep_power(const ExperimentConfig& cfg, const LogFn& log = {}) {
  std::vector<PowerPoint> out;
  for (double p : cfg.train.pmax_list) {
    for (Variant v : {Variant::kProposed, Variant::kFixAnt}) {
      ExperimentConfig c = cfg;
      c.system.p_max = p;
      if (log) log("sweep-power: p_max " + fmt12(p) + " W, " + to_string(v));
      out.push_back(power_point(p, v, run_replicates(c, v, log)));
    }
  }
  return out;
}

/// The configured variant at every SINR threshold, averaged over replicates.
inline std::vector<GammaPoint> sweep_gamma(const ExperimentConfig& cfg, const LogFn& log = {}) {
  std::vector<GammaPoint> out;
  for (double g : cfg.train.gamma_list) {
    ExperimentConfig c = cfg;
    c.system.gamma0 = g;
    if (log) log("sweep-gamma: gamma0 " + fmt12(g) + ", " + to_string(cfg.train.variant));
    out.push_back(gamma_point(g, run_replicates(c, cfg.train.variant, log)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// results.json

inline Json history_json(const RunResult& r) {
  Json epochs = Json::array();
  for (const auto& e : r.train.history) {
    epochs.push_back({{"epoch", e.epoch},
                      {"mean_loss", e.mean_loss},
                      {"mean_sum_rate", e.mean_sum_rate},
                      {"spacing_penalty", e.spacing_penalty},
                      {"sinr_penalty", e.sinr_penalty}});
  }
  return {{"variant", to_string(r.variant)}, {"seed", r.seed}, {"epochs", epochs}};
}

inline Json eval_json(const EvalSummary& e, Variant v) {
  return {{"variant", to_string(v)},
          {"count", e.count},
          {"mean_sum_rate", e.mean_sum_rate},
          {"mean_ps", e.mean_ps},
          {"mean_gamma", e.mean_gamma},
          {"sinr_satisfaction", e.sinr_satisfaction},
          {"spacing_satisfaction", e.spacing_satisfaction}};
}

inline Json power_json(const std::vector<PowerPoint>& pts) {
  Json a = Json::array();
  for (const auto& p : pts) {
    a.push_back({{"p_max_w", p.p_max_w},
                 {"variant", to_string(p.variant)},
                 {"mean_sum_rate", p.mean_sum_rate},
                 {"sinr_satisfaction", p.sinr_satisfaction}});
  }
  return a;
}

inline Json gamma_json(const std::vector<GammaPoint>& pts) {
  Json a = Json::array();
  for (const auto& g : pts) {
    a.push_back({{"gamma0", g.gamma0},
                 {"mean_sum_rate", g.mean_sum_rate},
                 {"mean_ps", g.mean_ps},
                 {"sinr_satisfaction", g.sinr_satisfaction}});
  }
  return a;
}

inline Json load_results(const std::filesystem::path& dir) {
  const auto path = dir / "results.json";
  if (!std::filesystem::exists(path)) return Json::object();
  std::ifstream in(path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o << text;
  if (!o) throw std::runtime_error("error writing " + path.string());
}

inline void save_results(const std::filesystem::path& dir, const Json& results) {
  write_text(dir / "results.json", results.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// CSV report

inline std::string history_csv(const Json& history) {
  std::ostringstream o;
  o << kHistoryHeader << "\n";
  for (const auto& e : history.at("epochs")) {
    o << e.at("epoch").get<int>() << "," << fmt12(e.at("mean_loss").get<double>()) << ","
      << fmt12(e.at("mean_sum_rate").get<double>()) << "," << fmt12(e.at("spacing_penalty").get<double>()) << ","
      << fmt12(e.at("sinr_penalty").get<double>()) << "\n";
  }
  return o.str();
}

inline std::string sweep_power_csv(const Json& rows) {
  std::ostringstream o;
  o << kSweepPowerHeader << "\n";
  for (const auto& r : rows) {
    o << fmt12(r.at("p_max_w").get<double>()) << "," << r.at("variant").get<std::string>() << ","
      << fmt12(r.at("mean_sum_rate").get<double>()) << "," << fmt12(r.at("sinr_satisfaction").get<double>()) << "\n";
  }
  return o.str();
}

inline std::string sweep_gamma_csv(const Json& rows) {
  std::ostringstream o;
  o << kSweepGammaHeader << "\n";
  for (const auto& r : rows) {
    o << fmt12(r.at("gamma0").get<double>()) << "," << fmt12(r.at("mean_sum_rate").get<double>()) << ","
      << fmt12(r.at("mean_ps").get<double>()) << "," << fmt12(r.at("sinr_satisfaction").get<double>()) << "\n";
  }
  return o.str();
}

/// Writes every CSV whose section is present in `results`; returns the file names.
inline std::vector<std::string> write_report(const Json& results, const std::filesystem::path& dir) {
  std::vector<std::string> written;
  try {
    if (results.contains("history")) {
      write_text(dir / "history.csv", history_csv(results.at("history")));
      written.push_back("history.csv");
    }
    if (results.contains("sweep_power")) {
      write_text(dir / "sweep_power.csv", sweep_power_csv(results.at("sweep_power")));
      written.push_back("sweep_power.csv");
    }
    if (results.contains("sweep_gamma")) {
      write_text(dir / "sweep_gamma.csv", sweep_gamma_csv(results.at("sweep_gamma")));
      written.push_back("sweep_gamma.csv");
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed results.json: ") + e.what());
  }
  return written;
}

// ---------------------------------------------------------------------------
// Scenario CSV

inline std::string scenario_csv_header(const SystemConfig& cfg) {
  std::ostringstream o;
  o << "index";
  for (int k = 1; k <= cfg.users; ++k) o << ",user" << k << "_x,user" << k << "_y,user" << k << "_z";
  for (int i = 1; i <= cfg.scatterers; ++i) o << ",scatterer" << i << "_x,scatterer" << i << "_y,scatterer" << i << "_z";
  o << ",target_x,target_y,target_z";
  return o.str();
}

inline std::string scenarios_csv(const std::vector<Scenario>& data, const SystemConfig& cfg) {
  std::ostringstream o;
  o << scenario_csv_header(cfg) << "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    o << i;
    auto put = [&](const Vec3& v) { o << "," << fmt17(v[0]) << "," << fmt17(v[1]) << "," << fmt17(v[2]); };
    for (const auto& u : data[i].user_origins) put(u);
    for (const auto& s : data[i].scatterers) put(s);
    put(data[i].target);
    o << "\n";
  }
  return o.str();
}

}  // namespace pisac
