#include <catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "pisac/gradcheck.hpp"
#include "pisac/ops.hpp"
#include "pisac/rng.hpp"
#include "grad_catalog.hpp"

using namespace pisac;
using namespace pisac::ad;

using namespace testutil;

TEST_CASE("forward: x^2 at 3 and its gradient") {
  Tape t;
  const Var x = t.leaf(Tensor::scalar(3.0));
  const Var y = square(x);
  CHECK(y.item() == 9.0);
  t.backward(y);
  CHECK(x.grad().item() == 6.0);
}

TEST_CASE("gradients accumulate over all paths") {
  Tape t;
  const Var x = t.leaf(Tensor::scalar(2.0));
  const Var y = x * x + 3.0 * x + exp(x * 0.0);
  t.backward(y);
  CHECK(x.grad().item() == Catch::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("relu subgradient convention") {
  for (const auto& [x0, g] : std::vector<std::pair<double, double>>{{1.0, 1.0}, {-1.0, 0.0}, {0.0, 0.0}}) {
    Tape t;
    const Var x = t.leaf(Tensor::scalar(x0));
    t.backward(relu(x));
    CHECK(x.grad().item() == g);
  }
}

TEST_CASE("min_last and maxpool route ties to the lowest index") {
  Tape t;
  const Var x = t.leaf(Tensor({4}, {2.0, 1.0, 1.0, 3.0}));
  t.backward(min_last(x));
  CHECK(x.grad().values == std::vector<double>{0, 1, 0, 0});

  Tape t2;
  const Var p = t2.leaf(Tensor({1, 1, 3}, {5.0, 5.0, 1.0}));
  const Var y = maxpool1d(p);
  CHECK(y.shape() == Shape{1, 1, 2});
  CHECK(y.value().values == std::vector<double>{5.0, 1.0});
  t2.backward(sum(y));
  CHECK(p.grad().values == std::vector<double>{1, 0, 1});
}

TEST_CASE("conv1d with a delta kernel is the identity") {
  Tape t;
  const Var x = t.constant(Tensor({1, 1, 5}, {1, 2, 3, 4, 5}));
  const Var w = t.constant(Tensor({1, 1, 3}, {0, 1, 0}));
  const Var b = t.constant(Tensor({1}, {0.0}));
  CHECK(conv1d(x, w, b).value().values == x.value().values);
  // Shift kernel reads the left neighbour with a zero pad.
  const Var shift_w = t.constant(Tensor({1, 1, 3}, {1, 0, 0}));
  CHECK(conv1d(x, shift_w, b).value().values == std::vector<double>{0, 1, 2, 3, 4});
}

TEST_CASE("logdet_spd of the widened diag(2, 3) is ln 36") {
  Tape t;
  Tensor m(Shape{4, 4});
  m[0] = 2.0;
  m[5] = 3.0;
  m[10] = 2.0;
  m[15] = 3.0;
  CHECK(logdet_spd(t.constant(m)).item() == Catch::Approx(std::log(36.0)).epsilon(1e-14));
}

TEST_CASE("logdet_spd gradient is the inverse") {
  Rng rng(41);
  const Tensor m = spd(rng, 4);
  Tape t;
  const Var x = t.leaf(m);
  t.backward(logdet_spd(x));
  const Eigen::Map<const RealMatrix> mm(m.values.data(), 4, 4);
  const RealMatrix inv = mm.inverse().transpose();
  for (std::size_t i = 0; i < 16; ++i) CHECK(x.grad()[i] == Catch::Approx(inv(i / 4, i % 4)).epsilon(1e-10));
  const auto res = check_gradient([](Tape&, const std::vector<Var>& v) { return logdet_spd(v[0]); }, {m});
  CHECK(res.max_rel_error <= 1e-5);
}

TEST_CASE("spot tolerances for matmul, sigmoid and maxpool") {
  Rng rng(77);
  const auto mm = check_gradient([](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); },
                                 {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})});
  CHECK(mm.max_rel_error <= 1e-6);
  const auto sg = check_gradient([](Tape&, const std::vector<Var>& v) { return sigmoid(v[0]); },
                                 {random_tensor(rng, {10}, -3, 3)});
  CHECK(sg.max_rel_error <= 1e-7);
  const auto mp = check_gradient([](Tape&, const std::vector<Var>& v) { return maxpool1d(v[0]); },
                                 {distinct(rng, {2, 3, 6})});
  CHECK(mp.max_rel_error <= 1e-8);
}

TEST_CASE("every primitive passes the finite-difference check over 20 seeds") {
  for (const Case& c : catalog()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(1000 + seed);
      worst = std::max(worst, check_gradient(c.graph, c.inputs(rng)).max_rel_error);
    }
    INFO(c.name << " worst relative error " << worst);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("backward is bit-identical across repeated runs") {
  Rng rng(5);
  const Tensor a = random_tensor(rng, {3, 3, 4}), w = random_tensor(rng, {2, 3, 3}), b = random_tensor(rng, {2});
  std::vector<std::vector<double>> grads;
  for (int run = 0; run < 3; ++run) {
    Tape t;
    const Var x = t.leaf(a), wv = t.leaf(w), bv = t.leaf(b);
    const Var y = sum(sigmoid(maxpool1d(elu(conv1d(x, wv, bv)))));
    t.backward(y);
    grads.push_back(wv.grad().values);
  }
  CHECK(grads[0] == grads[1]);
  CHECK(grads[1] == grads[2]);
}

TEST_CASE("errors: non-scalar root, shape mismatch, non-SPD, singular solve") {
  Tape t;
  const Var x = t.leaf(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(t.backward(x), DimensionError);
  CHECK_THROWS_AS(add(x, t.constant(Tensor({3}, 0.0))), DimensionError);
  CHECK_THROWS_AS(matmul(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3}))), DimensionError);
  CHECK_THROWS_AS(logdet_spd(t.constant(Tensor({2, 2}, {1, 0, 0, -1}))), NotPositiveDefiniteError);
  CHECK_THROWS_AS(solve(t.constant(Tensor({2, 2}, 0.0)), t.constant(Tensor({2, 1}, 1.0))), SingularMatrixError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("constants do not receive gradients") {
  Tape t;
  const Var c = t.constant(Tensor::scalar(4.0));
  const Var x = t.leaf(Tensor::scalar(1.5));
  const Var y = c * x;
  CHECK_FALSE(t.requires_grad(c.id()));
  t.backward(y);
  CHECK(x.grad().item() == 4.0);
  CHECK(c.grad().item() == 0.0);
}
