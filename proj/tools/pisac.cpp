// pisac: dataset generation, training, evaluation, sweeps and CSV reports.
//
// Exit codes: 0 success, 1 bad configuration or input, 2 numerical abort.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pisac/checkpoint.hpp"
#include "pisac/experiment.hpp"

namespace fs = std::filesystem;
using namespace pisac;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::vector<double> pmax_list;
  std::vector<double> gamma_list;
  std::string checkpoint;
  bool quiet = false;
};

ExperimentConfig load_with_overrides(const Options& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.variant) cfg.train.variant = parse_variant(*o.variant);
  if (!o.pmax_list.empty()) cfg.train.pmax_list = o.pmax_list;
  if (!o.gamma_list.empty()) cfg.train.gamma_list = o.gamma_list;
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const Options& o) {
  const fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + o.out + "'");
  return dir;
}

LogFn logger(const Options& o) {
  if (o.quiet) return {};
  return [](const std::string& m) { std::cerr << m << "\n"; };
}

void print_eval(const EvalSummary& e, Variant v) {
  std::cout << "variant " << to_string(v) << ": " << e.count << " test scenarios\n"
            << "  mean sum-rate        " << fmt12(e.mean_sum_rate) << " bit/s/Hz\n"
            << "  mean sensing power   " << fmt12(e.mean_ps) << " W\n"
            << "  SINR satisfaction    " << fmt12(e.sinr_satisfaction) << "\n"
            << "  spacing satisfaction " << fmt12(e.spacing_satisfaction) << "\n";
}

int cmd_gen_data(const Options& o) {
  const ExperimentConfig cfg = load_with_overrides(o);
  const fs::path dir = prepare_out(o);
  write_text(dir / "scenarios_train.csv", scenarios_csv(make_train_set(cfg.system, cfg.train), cfg.system));
  write_text(dir / "scenarios_test.csv", scenarios_csv(make_test_set(cfg.system, cfg.train), cfg.system));
  std::cout << "wrote " << cfg.train.train_size << " training and " << cfg.train.test_size << " test scenarios to "
            << dir.string() << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const ExperimentConfig cfg = load_with_overrides(o);
  const fs::path dir = prepare_out(o);
  const RunResult r = run_experiment(cfg, cfg.train.variant, logger(o));
  save_checkpoint((dir / "checkpoint.bin").string(), make_checkpoint(cfg, cfg.train.variant, r.train));
  Json results = load_results(dir);
  results["config"] = write_config(cfg);
  results["history"] = history_json(r);
  results["eval"] = eval_json(r.eval, r.variant);
  save_results(dir, results);
  write_report(results, dir);
  print_eval(r.eval, r.variant);
  return 0;
}

int cmd_eval(const Options& o) {
  const fs::path dir = prepare_out(o);
  const std::string path = o.checkpoint.empty() ? (dir / "checkpoint.bin").string() : o.checkpoint;
  const Checkpoint ck = load_checkpoint(path);
  ExperimentConfig cfg = ck.config;
  if (o.seed) cfg.train.seed = *o.seed;
  const EvalSummary e = evaluate(ck.params, cfg.system, ck.variant, make_test_set(cfg.system, cfg.train));
  Json results = load_results(dir);
  results["eval"] = eval_json(e, ck.variant);
  save_results(dir, results);
  print_eval(e, ck.variant);
  return 0;
}

int cmd_sweep_power(const Options& o) {
  const ExperimentConfig cfg = load_with_overrides(o);
  const fs::path dir = prepare_out(o);
  const auto pts = sweep_power(cfg, logger(o));
  Json results = load_results(dir);
  results["config"] = write_config(cfg);
  results["sweep_power"] = power_json(pts);
  save_results(dir, results);
  write_report(results, dir);
  std::cout << sweep_power_csv(results["sweep_power"]);
  return 0;
}

int cmd_sweep_gamma(const Options& o) {
  const ExperimentConfig cfg = load_with_overrides(o);
  const fs::path dir = prepare_out(o);
  const auto pts = sweep_gamma(cfg, logger(o));
  Json results = load_results(dir);
  results["config"] = write_config(cfg);
  results["sweep_gamma"] = gamma_json(pts);
  save_results(dir, results);
  write_report(results, dir);
  std::cout << sweep_gamma_csv(results["sweep_gamma"]);
  return 0;
}

int cmd_report(const Options& o) {
  const fs::path dir(o.out);
  if (!fs::exists(dir / "results.json")) throw ConfigError("no results.json in '" + o.out + "'");
  for (const auto& f : write_report(load_results(dir), dir)) std::cout << "wrote " << (dir / f).string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ISAC simulator with pinching and movable antennas and a learned optimizer"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* s) {
    s->add_option("--config", o.config, "Configuration file (key = value)")->required()->check(CLI::ExistingFile);
  };
  auto add_out = [&](CLI::App* s) { s->add_option("--out", o.out, "Output directory")->required(); };
  auto add_seed = [&](CLI::App* s) { s->add_option("--seed", o.seed, "Master seed override"); };
  auto add_variant = [&](CLI::App* s) {
    s->add_option("--variant", o.variant, "proposed | fix-ant")->check(CLI::IsMember({"proposed", "fix-ant"}));
  };
  auto add_quiet = [&](CLI::App* s) { s->add_flag("--quiet", o.quiet, "No progress output"); };

  CLI::App* gen = app.add_subcommand("gen-data", "Write the training and test scenario files");
  add_config(gen);
  add_out(gen);
  add_seed(gen);

  CLI::App* tr = app.add_subcommand("train", "Train one variant, evaluate it and write history.csv");
  add_config(tr);
  add_out(tr);
  add_seed(tr);
  add_variant(tr);
  add_quiet(tr);

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on its test set");
  add_out(ev);
  add_seed(ev);
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file (default OUT/checkpoint.bin)");

  CLI::App* sp = app.add_subcommand("sweep-power", "Train and evaluate both variants over transmit powers");
  add_config(sp);
  add_out(sp);
  add_seed(sp);
  add_quiet(sp);
  sp->add_option("--pmax-list", o.pmax_list, "Comma-separated transmit powers (W)")->delimiter(',');

  CLI::App* sg = app.add_subcommand("sweep-gamma", "Train and evaluate over sensing SINR thresholds");
  add_config(sg);
  add_out(sg);
  add_seed(sg);
  add_variant(sg);
  add_quiet(sg);
  sg->add_option("--gamma-list", o.gamma_list, "Comma-separated SINR thresholds")->delimiter(',');

  CLI::App* rp = app.add_subcommand("report", "Regenerate the CSV files from OUT/results.json");
  add_out(rp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*sp) return cmd_sweep_power(o);
    if (*sg) return cmd_sweep_gamma(o);
    if (*rp) return cmd_report(o);
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const NotPositiveDefiniteError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const SingularMatrixError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
