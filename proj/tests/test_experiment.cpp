#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "pisac/experiment.hpp"

namespace fs = std::filesystem;
using namespace pisac;

namespace {

const fs::path& scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / ("pisac_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

fs::path write_config_file(const std::string& name, const std::string& body) {
  const fs::path p = scratch() / name;
  std::ofstream(p) << body;
  return p;
}

const char* kTinyConfig =
    "n_t = 3\nn_r = 2\nn_k = 2\nusers = 1\nscatterers = 1\n"
    "train_size = 10\ntest_size = 10\nbatch_size = 5\nepochs = 3\nseed = 1\n";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PISAC_CLI_PATH) + " " + args + " > " + (scratch() / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("gen-data writes one row per scenario and is reproducible") {
  const fs::path cfg = write_config_file("gen.cfg", kTinyConfig);
  const fs::path a = scratch() / "gen_a", b = scratch() / "gen_b", c = scratch() / "gen_c";
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + a.string()) == 0);
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + b.string()) == 0);
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + c.string() + " --seed 2") == 0);
  const std::string train = read_file(a / "scenarios_train.csv");
  CHECK(count_lines(train) == 11);
  CHECK(first_line(train) ==
        "index,user1_x,user1_y,user1_z,scatterer1_x,scatterer1_y,scatterer1_z,target_x,target_y,target_z");
  CHECK(train == read_file(b / "scenarios_train.csv"));
  CHECK(read_file(a / "scenarios_test.csv") == read_file(b / "scenarios_test.csv"));
  CHECK(train != read_file(c / "scenarios_train.csv"));
  CHECK(train != read_file(a / "scenarios_test.csv"));
}

TEST_CASE("train writes the history schema and report regenerates it byte-identically") {
  const fs::path cfg = write_config_file("train.cfg", kTinyConfig);
  const fs::path out = scratch() / "train";
  REQUIRE(run_cli("train --quiet --config " + cfg.string() + " --out " + out.string()) == 0);
  const std::string history = read_file(out / "history.csv");
  CHECK(first_line(history) == "epoch,mean_loss,mean_sum_rate,spacing_penalty,sinr_penalty");
  CHECK(count_lines(history) == 4);
  CHECK(fs::exists(out / "checkpoint.bin"));

  fs::remove(out / "history.csv");
  REQUIRE(run_cli("report --out " + out.string()) == 0);
  CHECK(read_file(out / "history.csv") == history);
  REQUIRE(run_cli("report --out " + out.string()) == 0);
  CHECK(read_file(out / "history.csv") == history);

  // Same config and seed: identical history from a fresh directory.
  const fs::path again = scratch() / "train_again";
  REQUIRE(run_cli("train --quiet --config " + cfg.string() + " --out " + again.string()) == 0);
  CHECK(read_file(again / "history.csv") == history);

  REQUIRE(run_cli("eval --out " + out.string()) == 0);
  const Json results = load_results(out);
  CHECK(results.at("eval").at("count").get<int>() == 10);
  CHECK(results.at("eval").at("variant").get<std::string>() == "proposed");
}

TEST_CASE("sweeps emit one row per point") {
  const fs::path cfg = write_config_file(
      "sweep.cfg", "n_t = 3\nn_r = 2\nn_k = 2\nusers = 1\nscatterers = 1\n"
                   "train_size = 10\ntest_size = 10\nbatch_size = 5\nepochs = 1\nseed = 1\n");
  const fs::path out = scratch() / "sweep";
  REQUIRE(run_cli("sweep-power --quiet --config " + cfg.string() + " --out " + out.string() + " --pmax-list 0.1,1") ==
          0);
  const std::string power = read_file(out / "sweep_power.csv");
  CHECK(first_line(power) == "p_max_w,variant,mean_sum_rate,sinr_satisfaction");
  CHECK(count_lines(power) == 5);
  CHECK(power.find("\n0.1,proposed,") != std::string::npos);
  CHECK(power.find("\n0.1,fix-ant,") != std::string::npos);
  CHECK(power.find("\n1,proposed,") != std::string::npos);
  CHECK(power.find("\n1,fix-ant,") != std::string::npos);

  REQUIRE(run_cli("sweep-gamma --quiet --config " + cfg.string() + " --out " + out.string() +
                  " --gamma-list 0.001,0.01,0.05") == 0);
  const std::string gamma = read_file(out / "sweep_gamma.csv");
  CHECK(first_line(gamma) == "gamma0,mean_sum_rate,mean_ps,sinr_satisfaction");
  CHECK(count_lines(gamma) == 4);

  fs::remove(out / "sweep_power.csv");
  fs::remove(out / "sweep_gamma.csv");
  REQUIRE(run_cli("report --out " + out.string()) == 0);
  CHECK(read_file(out / "sweep_power.csv") == power);
  CHECK(read_file(out / "sweep_gamma.csv") == gamma);
}

TEST_CASE("exit codes: 1 for bad input, 2 for numerical aborts") {
  const fs::path out = scratch() / "codes";
  CHECK(run_cli("train --config " + (scratch() / "missing.cfg").string() + " --out " + out.string()) == 1);
  CHECK(run_cli("train --config " + write_config_file("unknown.cfg", "n_tt = 3\n").string() + " --out " +
                out.string()) == 1);
  CHECK(run_cli("train --config " + write_config_file("invalid.cfg", "batch_size = 0\n").string() + " --out " +
                out.string()) == 1);
  const fs::path tiny = write_config_file("codes.cfg", kTinyConfig);
  CHECK(run_cli("train --config " + tiny.string() + " --out " + out.string() + " --variant other") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("report --out " + (scratch() / "nothing").string()) == 1);
  CHECK(run_cli("eval --out " + (scratch() / "nothing").string()) == 1);

  const fs::path degenerate =
      write_config_file("degenerate.cfg", std::string(kTinyConfig) + "noise_comm = 1e-300\nnoise_sense = 1e-300\n");
  CHECK(run_cli("train --quiet --config " + degenerate.string() + " --out " + out.string()) == 2);
}

TEST_CASE("report formatting uses 12 significant digits") {
  CHECK(fmt12(1.0) == "1");
  CHECK(fmt12(0.1) == "0.1");
  CHECK(fmt12(1.0 / 3.0) == "0.333333333333");
  CHECK(fmt12(12345.678901234567) == "12345.6789012");

  Json rows = Json::array();
  rows.push_back({{"gamma0", 0.01}, {"mean_sum_rate", 2.0 / 3.0}, {"mean_ps", 1e-13}, {"sinr_satisfaction", 0.95}});
  CHECK(sweep_gamma_csv(rows) == "gamma0,mean_sum_rate,mean_ps,sinr_satisfaction\n0.01,0.666666666667,1e-13,0.95\n");
}

TEST_CASE("sweep aggregation averages replicates") {
  std::vector<RunResult> runs(2);
  runs[0].eval.mean_sum_rate = 4.0;
  runs[0].eval.sinr_satisfaction = 1.0;
  runs[0].eval.mean_ps = 2e-13;
  runs[1].eval.mean_sum_rate = 6.0;
  runs[1].eval.sinr_satisfaction = 0.5;
  runs[1].eval.mean_ps = 4e-13;
  const PowerPoint p = power_point(0.1, Variant::kFixAnt, runs);
  CHECK(p.mean_sum_rate == 5.0);
  CHECK(p.sinr_satisfaction == 0.75);
  const GammaPoint g = gamma_point(0.01, runs);
  CHECK(g.mean_ps == Catch::Approx(3e-13));
}
