#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cfq/autodiff.hpp"
#include "cfq/layers.hpp"
#include "cfq/optim.hpp"
#include "cfq/rng.hpp"
#include "oracle_helpers.hpp"

using namespace cfq;
using namespace cfq::ad;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("dense layer reproduces hand-computed output") {
  Tape t;
  Var x = t.input(Tensor({2}, {1.0, 1.0}));
  Var W = t.input(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Var b = t.input(Tensor({2}, {0.0, 0.0}));
  Var y = linear(x, W, b);
  REQUIRE(y.value()[0] == 3.0);
  REQUIRE(y.value()[1] == 7.0);
}

TEST_CASE("softmax matches analytic two-logit case and rows sum to one") {
  // logits (c, c + ln 3) -> (1/4, 3/4) regardless of c
  for (double c : {0.0, -5.0, 117.0}) {
    Tape t;
    Var y = softmax(t.input(Tensor({2}, {c, c + std::log(3.0)})));
    REQUIRE(std::abs(y.value()[0] - 0.25) < 1e-12);
    REQUIRE(std::abs(y.value()[1] - 0.75) < 1e-12);
  }
  Rng rng(77);
  Tape t;
  Var y = softmax(t.input(random_tensor({5, 7}, rng, -30.0, 30.0)));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) s += y.value().at(r, c);
    REQUIRE(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("cross entropy clamps vanishing probabilities at -log(1e-8)") {
  Tape t;
  // true-class probability exactly zero -> clamped loss, zero gradient
  Var p = t.input(Tensor({1, 2}, {0.0, 1.0}));
  int labels[1] = {0};
  Var loss = cross_entropy(p, std::span<const int>(labels, 1));
  REQUIRE(std::abs(loss.value().item() - 18.420680743952367) < 1e-12);
  t.backward(loss);
  REQUIRE(p.grad()[0] == 0.0);
  REQUIRE(p.grad()[1] == 0.0);
}

TEST_CASE("cross entropy of the uniform 3-way guess is ln 3") {
  Tape t;
  Var p = t.input(Tensor({2, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3, 1.0 / 3, 1.0 / 3, 1.0 / 3}));
  std::vector<int> labels{0, 2};
  Var loss = cross_entropy(p, labels);
  REQUIRE(std::abs(loss.value().item() - std::log(3.0)) < 1e-12);
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  Tape t;
  Var p = t.input(Tensor({1, 3}, {0.2, 0.3, 0.5}));
  REQUIRE_THROWS_AS(cross_entropy(p, 3), std::out_of_range);
  REQUIRE_THROWS_AS(cross_entropy(p, -1), std::out_of_range);
}

TEST_CASE("shared subexpressions accumulate gradients") {
  // z = (x^2)^2 + x * x^2 = x^4 + x^3, dz/dx = 4x^3 + 3x^2
  const double x0 = 1.5;
  Tape t;
  Var x = t.input(Tensor::scalar(x0));
  Var y = square(x);
  Var z = add(square(y), mul(x, y));
  REQUIRE(std::abs(z.value().item() - (std::pow(x0, 4) + std::pow(x0, 3))) < 1e-12);
  t.backward(z);
  REQUIRE(std::abs(x.grad().item() - (4 * std::pow(x0, 3) + 3 * x0 * x0)) < 1e-12);
}

TEST_CASE("parameters bound twice share one node") {
  Rng rng(3);
  Param w("w", random_tensor({3}, rng));
  Tape t;
  Var a = t.param(w);
  Var b = t.param(w);
  REQUIRE(a.id() == b.id());
  Var loss = sum(mul(a, b));  // sum(w^2), grad 2w
  t.backward(loss);
  const Tensor* g = t.grad_of(w);
  REQUIRE(g != nullptr);
  for (std::size_t i = 0; i < 3; ++i) REQUIRE(std::abs((*g)[i] - 2 * w.value[i]) < 1e-12);
}

TEST_CASE("gradient reversal is identity forward and -lambda backward") {
  Tape t;
  Var x = t.input(Tensor({3}, {1.0, -2.0, 0.5}));
  Var y = grl(x, 0.7);
  for (std::size_t i = 0; i < 3; ++i) REQUIRE(y.value()[i] == x.value()[i]);
  Var loss = sum(mul(y, t.input(Tensor({3}, {2.0, 3.0, 4.0}))));
  t.backward(loss);
  REQUIRE(std::abs(x.grad()[0] - (-0.7 * 2.0)) < 1e-15);
  REQUIRE(std::abs(x.grad()[1] - (-0.7 * 3.0)) < 1e-15);
  REQUIRE(std::abs(x.grad()[2] - (-0.7 * 4.0)) < 1e-15);
  REQUIRE_THROWS_AS(grl(x, -0.1), std::invalid_argument);
}

TEST_CASE("dropout is deterministic per seed and scales survivors") {
  Tensor x({1000});
  x.fill(1.0);
  Rng r1(42), r2(42), r3(43);
  Tape t1, t2, t3;
  Var y1 = dropout(t1.input(x), 0.25, r1);
  Var y2 = dropout(t2.input(x), 0.25, r2);
  Var y3 = dropout(t3.input(x), 0.25, r3);
  std::size_t kept = 0, diff = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    REQUIRE(y1.value()[i] == y2.value()[i]);
    if (y1.value()[i] != y3.value()[i]) ++diff;
    if (y1.value()[i] != 0.0) {
      REQUIRE(std::abs(y1.value()[i] - 1.0 / 0.75) < 1e-15);
      ++kept;
    }
  }
  REQUIRE(diff > 0);
  REQUIRE(kept > 650);
  REQUIRE(kept < 850);

  // rate 0 is the identity
  Rng r4(1);
  Tape t4;
  Var y4 = dropout(t4.input(x), 0.0, r4);
  for (std::size_t i = 0; i < 1000; ++i) REQUIRE(y4.value()[i] == 1.0);

  // gradient passes exactly through the stored mask
  Rng r5(42);
  Tape t5;
  Var x5 = t5.input(x);
  Var y5 = dropout(x5, 0.25, r5);
  t5.backward(sum(y5));
  for (std::size_t i = 0; i < 1000; ++i) REQUIRE(x5.grad()[i] == y1.value()[i]);
}

TEST_CASE("finite differences confirm gradients of every primitive") {
  Rng rng(20250);
  double worst = 0.0;
  std::size_t checks = 0;
  auto run = [&](auto build, std::vector<Tensor> inputs) {
    auto rep = oracle::check_input_gradients(build, std::move(inputs));
    worst = std::max(worst, rep.max_rel_err);
    checks += rep.checks;
  };

  run([](Tape& t, const std::vector<Var>& v) { return sum(mul(add(v[0], v[1]), sub(v[0], v[1]))); },
      {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  run([](Tape& t, const std::vector<Var>& v) { return mean_all(linear(v[0], v[1], v[2])); },
      {random_tensor({5, 3}, rng), random_tensor({4, 3}, rng), random_tensor({4}, rng)});
  run([](Tape& t, const std::vector<Var>& v) { return sum(affine(v[0], v[1])); },
      {random_tensor({2, 6}, rng), random_tensor({3, 6}, rng)});
  run([](Tape& t, const std::vector<Var>& v) { return sum(tanh_(v[0])); },
      {random_tensor({7}, rng, -2.0, 2.0)});
  run([](Tape& t, const std::vector<Var>& v) { return sum(sigmoid(v[0])); },
      {random_tensor({7}, rng, -3.0, 3.0)});
  run([](Tape& t, const std::vector<Var>& v) { return sum(mul(relu(v[0]), v[0])); },
      {random_tensor({9}, rng, 0.2, 2.0)});  // stay away from the kink
  run([](Tape& t, const std::vector<Var>& v) {
        std::vector<int> labels{1, 0, 2};
        return cross_entropy(softmax(v[0]), labels);
      },
      {random_tensor({3, 3}, rng, -1.5, 1.5)});
  // grl is intentionally absent: its backward pass contradicts the true
  // derivative by contract, so finite differences cannot validate it.
  run([](Tape& t, const std::vector<Var>& v) {
        return sum(mul(concat_cols(v[0], v[1]), concat_cols(v[1], v[0])));
      },
      {random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)});
  run([](Tape& t, const std::vector<Var>& v) {
        return sum(square(concat_rows({v[0], v[1]})));
      },
      {random_tensor({2, 3}, rng), random_tensor({4, 3}, rng)});
  run([](Tape& t, const std::vector<Var>& v) { return sum(square(slice_cols(v[0], 1, 2))); },
      {random_tensor({3, 4}, rng)});
  run([](Tape& t, const std::vector<Var>& v) { return sum(mul(tile_cols(v[0], 3), v[1])); },
      {random_tensor({4, 1}, rng), random_tensor({4, 3}, rng)});
  run([](Tape& t, const std::vector<Var>& v) {
        return sum(scale_cols(v[0], {0.5, -1.0, 2.0}));
      },
      {random_tensor({3, 3}, rng)});
  run([](Tape& t, const std::vector<Var>& v) {
        return sum(square(gather_rows(v[0], {2, 0, 1, 0})));  // repeated row
      },
      {random_tensor({3, 2}, rng)});
  run([](Tape& t, const std::vector<Var>& v) { return mean_all(scale(add_scalar(v[0], 0.3), 1.7)); },
      {random_tensor({6}, rng)});

  INFO("max rel err " << worst << " over " << checks << " checks");
  REQUIRE(checks > 100);
  REQUIRE(worst < 1e-6);
}

TEST_CASE("finite differences confirm the recurrent cell end to end") {
  Rng rng(99);
  LstmParams lstm("cell", 5, 4, rng);
  std::vector<Tensor> xs;
  for (int s = 0; s < 3; ++s) xs.push_back(random_tensor({2, 5}, rng));

  auto build = [&](Tape& t) {
    std::vector<Var> seq;
    for (const Tensor& x : xs) seq.push_back(t.input(x));
    return sum(square(lstm.run(t, seq)));
  };
  auto rep = oracle::check_param_gradients(build, lstm.all(), 1e-5, 8);
  INFO("max rel err " << rep.max_rel_err << " over " << rep.checks << " checks");
  REQUIRE(rep.checks >= 80);
  REQUIRE(rep.max_rel_err < 1e-4);
}

TEST_CASE("adam first step moves by roughly -lr * sign(gradient)") {
  Param p("p", Tensor({1}, {1.0}));
  Tape t;
  Var loss = scale(sum(t.param(p)), 2.0);  // d/dp = 2
  t.backward(loss);
  AdamConfig cfg;  // lr 3e-4
  adam_step(p, t, cfg);
  // mhat = g, vhat = g^2 -> step = lr * g / (|g| + eps) ~= lr
  REQUIRE(std::abs((1.0 - p.value[0]) - cfg.lr) < 1e-10);
  REQUIRE(p.adam.step == 1);
}

TEST_CASE("adam converges on a quadratic") {
  Param p("p", Tensor({2}, {3.0, -2.0}));
  AdamConfig cfg;
  cfg.lr = 0.05;
  for (int i = 0; i < 2000; ++i) {
    Tape t;
    Var v = t.param(p);
    Var loss = sum(square(sub(v, t.input(Tensor({2}, {1.0, 0.5})))));
    t.backward(loss);
    adam_step(p, t, cfg);
  }
  REQUIRE(std::abs(p.value[0] - 1.0) < 1e-3);
  REQUIRE(std::abs(p.value[1] - 0.5) < 1e-3);
}

TEST_CASE("adam skips parameters absent from the tape") {
  Param used("u", Tensor({1}, {1.0}));
  Param unused("x", Tensor({1}, {5.0}));
  Tape t;
  Var loss = sum(square(t.param(used)));
  t.backward(loss);
  AdamConfig cfg;
  adam_step(unused, t, cfg);
  REQUIRE(unused.value[0] == 5.0);
  REQUIRE(unused.adam.step == 0);
}

TEST_CASE("polyak update blends target toward online weights") {
  Param target("t", Tensor({2}, {1.0, 10.0}));
  Param online("o", Tensor({2}, {2.0, 0.0}));
  polyak_update(target, online, 0.005);
  REQUIRE(std::abs(target.value[0] - 1.005) < 1e-15);
  REQUIRE(std::abs(target.value[1] - 9.95) < 1e-15);
}

TEST_CASE("backward requires a scalar root and same-tape operands") {
  Tape t;
  Var x = t.input(Tensor({2}, {1.0, 2.0}));
  REQUIRE_THROWS_AS(t.backward(x), std::logic_error);
  Tape t2;
  Var y = t2.input(Tensor({2}, {1.0, 2.0}));
  REQUIRE_THROWS_AS(add(x, y), std::logic_error);
}

TEST_CASE("shape mismatches are rejected with context") {
  Tape t;
  Var a = t.input(Tensor({2, 3}));
  Var b = t.input(Tensor({3, 2}));
  REQUIRE_THROWS_AS(add(a, b), std::invalid_argument);
  Var W = t.input(Tensor({4, 5}));
  REQUIRE_THROWS_AS(affine(a, W), std::invalid_argument);
  REQUIRE_THROWS_AS(slice_cols(a, 2, 2), std::invalid_argument);
}
