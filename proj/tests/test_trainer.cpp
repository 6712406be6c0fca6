#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <vector>

#include "pisac/checkpoint.hpp"
#include "pisac/trainer.hpp"

using namespace pisac;

namespace {

SystemConfig tiny_system() {
  SystemConfig c;
  c.n_t = 3;
  c.n_r = 2;
  c.users = 1;
  c.n_k = 2;
  c.scatterers = 1;
  c.user_boxes.resize(1);
  return c;
}

TrainConfig tiny_train(std::uint64_t seed, int epochs) {
  TrainConfig t;
  t.train_size = 50;
  t.test_size = 20;
  t.batch_size = 10;
  t.epochs = epochs;
  t.seed = seed;
  return t;
}

bool bit_equal(const NetworkParams& a, const NetworkParams& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].shape != b.tensors[i].shape) return false;
    for (std::size_t j = 0; j < a.tensors[i].size(); ++j) {
      if (std::memcmp(&a.tensors[i].values[j], &b.tensors[i].values[j], sizeof(double)) != 0) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("make_dataset is deterministic and streams are disjoint") {
  const SystemConfig c;
  const auto a = make_dataset(c, 7, stream::kTrain, 100);
  const auto b = make_dataset(c, 7, stream::kTrain, 100);
  CHECK(a == b);

  TrainConfig t;
  t.seed = 7;
  t.train_size = 300;
  t.test_size = 300;
  const auto train = make_train_set(c, t);
  const auto test = make_test_set(c, t);
  std::size_t shared = 0;
  for (const auto& x : train) {
    for (const auto& y : test) shared += x == y;
  }
  CHECK(shared == 0);
  CHECK(make_dataset(c, 8, stream::kTrain, 1)[0] != a[0]);
}

TEST_CASE("make_dataset handles full-scale sizes") {
  const SystemConfig c;
  const auto big = make_dataset(c, 1, stream::kTrain, 50000);
  REQUIRE(big.size() == 50000);
  CHECK(big.front() != big.back());
  CHECK(big.back() == sample_scenario(c, derive_seed(1, stream::kTrain, 49999)));
}

TEST_CASE("adam: first step moves each parameter by about lr against the gradient sign") {
  NetworkParams p;
  p.tensors.push_back(ad::Tensor({4}, std::vector<double>{1.0, -2.0, 0.5, 3.0}));
  const NetworkParams before = p;
  AdamState st = adam_init(p);
  TrainConfig h;
  h.learning_rate = 1e-3;
  const std::vector<ad::Tensor> g{ad::Tensor({4}, std::vector<double>{0.3, -7.0, 1e-3, -1e-2})};
  adam_step(p, g, st, h);
  CHECK(st.step == 1);
  for (std::size_t i = 0; i < 4; ++i) {
    const double expected = -h.learning_rate * (g[0][i] > 0 ? 1.0 : -1.0);
    CHECK(p.tensors[0][i] - before.tensors[0][i] == Catch::Approx(expected).epsilon(1e-4));
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  NetworkParams p;
  p.tensors.push_back(ad::Tensor({3}, std::vector<double>{1.0, 2.0, 3.0}));
  const NetworkParams before = p;
  AdamState st = adam_init(p);
  const std::vector<ad::Tensor> g{ad::Tensor({3}, 0.0)};
  for (int i = 0; i < 3; ++i) adam_step(p, g, st, TrainConfig{});
  CHECK(st.step == 3);
  CHECK(p == before);

  const std::vector<ad::Tensor> bad{ad::Tensor({2}, 0.0)};
  CHECK_THROWS_AS(adam_step(p, bad, st, TrainConfig{}), DimensionError);
  CHECK_THROWS_AS(adam_step(p, {}, st, TrainConfig{}), DimensionError);
}

TEST_CASE("training is bit-reproducible") {
  const SystemConfig c = tiny_system();
  const TrainConfig t = tiny_train(3, 10);
  const auto data = make_train_set(c, t);
  const TrainResult a = train(c, t, Variant::kProposed, data);
  const TrainResult b = train(c, t, Variant::kProposed, data);
  CHECK(bit_equal(a.params, b.params));
  CHECK(a.adam == b.adam);
  REQUIRE(a.history.size() == 10);
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].mean_loss == b.history[e].mean_loss);
    CHECK(a.history[e].epoch == static_cast<int>(e) + 1);
  }
  CHECK(a.adam.step == 50);  // 5 batches x 10 epochs
}

TEST_CASE("training reduces the loss on a tiny problem") {
  const SystemConfig c = tiny_system();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const TrainConfig t = tiny_train(seed, 20);
    const TrainResult r = train(c, t, Variant::kProposed, make_train_set(c, t));
    INFO("seed " << seed);
    CHECK(r.history.back().mean_loss <= r.history.front().mean_loss);
  }
}

TEST_CASE("history components sum to the reported loss") {
  const SystemConfig c = tiny_system();
  const TrainConfig t = tiny_train(5, 4);
  const TrainResult r = train(c, t, Variant::kProposed, make_train_set(c, t));
  for (const auto& e : r.history) {
    CHECK(e.mean_loss == -e.mean_sum_rate + e.spacing_penalty + e.sinr_penalty);
    CHECK(e.mean_sum_rate >= 0.0);
    CHECK(e.spacing_penalty >= 0.0);
    CHECK(e.sinr_penalty >= 0.0);
  }
}

TEST_CASE("fix-ant training keeps positions on the fixed grid") {
  const SystemConfig c = tiny_system();
  const TrainConfig t = tiny_train(2, 5);
  const NetworkParams init = init_params(NetworkConfig::from(c), derive_seed(t.seed, stream::kInit));
  const TrainResult r = train(c, t, Variant::kFixAnt, make_train_set(c, t));
  const PAPlacement grid = PAPlacement::grid(c);
  for (const auto& e : r.history) {
    REQUIRE(e.mean_pa_y.size() == grid.y.size());
    for (std::size_t n = 0; n < grid.y.size(); ++n) CHECK(e.mean_pa_y[n] == Catch::Approx(grid.y[n]).margin(1e-12));
  }
  // The position heads are bypassed, so their parameters never move.
  const std::size_t o = 2 * NetworkConfig::from(c).depth;
  for (std::size_t i = o; i < o + 4; ++i) CHECK(r.params.tensors[i].values == init.tensors[i].values);
}

TEST_CASE("fix-ant evaluation uses the uniform waveguide grid") {
  const SystemConfig c;
  const auto sc = make_dataset(c, 4, stream::kTest, 3);
  std::vector<const Scenario*> ptr;
  for (const auto& s : sc) ptr.push_back(&s);
  ad::Tape tape;
  const NetworkOutput out = forward(tape.constant(batch_inputs(ptr, c)),
                                    param_leaves(tape, init_params(NetworkConfig::from(c), 1)), c, Variant::kFixAnt);
  const std::vector<double> expected{0, 2, 4, 6, 8, 10};
  for (std::size_t b = 0; b < sc.size(); ++b) {
    const Decision d = extract(out, b, c);
    for (std::size_t n = 0; n < 6; ++n) CHECK(d.pa.y[n] == Catch::Approx(expected[n]).margin(1e-12));
  }
}

TEST_CASE("evaluate: deterministic, non-negative, consistent with the training graph") {
  const SystemConfig c = tiny_system();
  const TrainConfig t = tiny_train(4, 3);
  const TrainResult r = train(c, t, Variant::kProposed, make_train_set(c, t));
  const auto test = make_test_set(c, t);
  const EvalSummary a = evaluate(r.params, c, Variant::kProposed, test);
  const EvalSummary b = evaluate(r.params, c, Variant::kProposed, test);
  REQUIRE(a.count == test.size());
  CHECK(a.mean_sum_rate == b.mean_sum_rate);
  CHECK(a.mean_ps == b.mean_ps);
  // A different inference chunk only changes GEMM rounding.
  const EvalSummary chunked = evaluate(r.params, c, Variant::kProposed, test, 7);
  CHECK(chunked.mean_sum_rate == Catch::Approx(a.mean_sum_rate).epsilon(1e-9));
  CHECK(a.max_gamma_rel_gap <= 1e-9);
  for (const auto& rec : a.records) {
    CHECK(rec.sum_rate >= 0.0);
    CHECK(rec.gamma_s >= 0.0);
    CHECK(rec.p_s >= 0.0);
    for (double x : rec.rates) CHECK(x >= 0.0);
  }
  CHECK(a.sinr_satisfaction >= 0.0);
  CHECK(a.sinr_satisfaction <= 1.0);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  ExperimentConfig cfg;
  cfg.system = tiny_system();
  cfg.train = tiny_train(6, 2);
  const TrainResult r = train(cfg.system, cfg.train, Variant::kFixAnt, make_train_set(cfg.system, cfg.train));
  const Checkpoint ck = make_checkpoint(cfg, Variant::kFixAnt, r);

  std::stringstream buf;
  write_checkpoint(buf, ck);
  const std::string bytes = buf.str();
  CHECK(bytes.rfind("PISAC", 0) == 0);
  std::istringstream in(bytes);
  const Checkpoint back = read_checkpoint(in);
  CHECK(back.variant == Variant::kFixAnt);
  CHECK(back.epochs_done == 2);
  CHECK(bit_equal(back.params, ck.params));
  CHECK(back.adam == ck.adam);
  CHECK(write_config(back.config) == write_config(cfg));

  std::stringstream again;
  write_checkpoint(again, back);
  CHECK(again.str() == bytes);

  const auto test = make_test_set(cfg.system, cfg.train);
  const EvalSummary e1 = evaluate(ck.params, cfg.system, ck.variant, test);
  const EvalSummary e2 = evaluate(back.params, back.config.system, back.variant, test);
  CHECK(e1.mean_sum_rate == e2.mean_sum_rate);
  CHECK(e1.mean_ps == e2.mean_ps);
  CHECK(e1.sinr_satisfaction == e2.sinr_satisfaction);
}

TEST_CASE("resuming from a checkpoint continues the same trajectory") {
  const SystemConfig c = tiny_system();
  const TrainConfig full = tiny_train(9, 4);
  TrainConfig half = full;
  half.epochs = 2;
  const auto data = make_train_set(c, full);
  const TrainResult straight = train(c, full, Variant::kProposed, data);

  ExperimentConfig cfg{c, half};
  std::stringstream buf;
  write_checkpoint(buf, make_checkpoint(cfg, Variant::kProposed, train(c, half, Variant::kProposed, data)));
  const TrainResult resumed = train_from(resume_state(read_checkpoint(buf)), c, full, Variant::kProposed, data);
  CHECK(resumed.epochs_done == 4);
  CHECK(bit_equal(resumed.params, straight.params));
  REQUIRE(resumed.history.size() == 2);
  CHECK(resumed.history.back().mean_loss == straight.history.back().mean_loss);
}

TEST_CASE("corrupt checkpoints are rejected") {
  ExperimentConfig cfg;
  cfg.system = tiny_system();
  cfg.train = tiny_train(1, 0);
  TrainResult r;
  r.params = init_params(NetworkConfig::from(cfg.system), 1);
  r.adam = adam_init(r.params);
  std::stringstream buf;
  write_checkpoint(buf, make_checkpoint(cfg, Variant::kProposed, r));
  const std::string bytes = buf.str();

  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_checkpoint(truncated), ConfigError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::istringstream m(bad_magic);
  CHECK_THROWS_AS(read_checkpoint(m), ConfigError);
  std::string bad_version = bytes;
  bad_version[5] = 9;
  std::istringstream v(bad_version);
  CHECK_THROWS_AS(read_checkpoint(v), ConfigError);
}

TEST_CASE("non-finite loss aborts training") {
  const SystemConfig c = tiny_system();
  const TrainConfig t = tiny_train(1, 1);
  TrainResult start;
  start.params = init_params(NetworkConfig::from(c), 1);
  start.adam = adam_init(start.params);
  start.params.tensors.back()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train_from(start, c, t, Variant::kProposed, make_train_set(c, t)), NumericalAbort);
}
