#include <catch_amalgamated.hpp>

#include <cmath>

#include "cfq/critic.hpp"
#include "oracle_helpers.hpp"

using namespace cfq;
using namespace cfq::ad;

namespace {

constexpr std::size_t kD = 5;

CriticNet constant_critic(double value, Rng& rng) {
  CriticNet c("const", kD, 6, rng);
  for (Param* p : c.all()) p->value.fill(0.0);
  c.q_head.b.value.fill(value);
  return c;
}

Tensor random_mat(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("bootstrap target arithmetic with constant target critics") {
  Rng rng(1);
  CriticNet q1 = constant_critic(5.0, rng);
  CriticNet q2 = constant_critic(3.0, rng);
  Tensor next_br({1, kD}, {0.1, 0.2, 0.3, 0.4, 0.5});
  Tensor actions({1, 3}, {0.5, 0.5, 0.5});
  Tensor r({1, 1}, {1.0});

  Tensor y = td_targets(q1, q2, next_br, actions, r, {0}, 0.7);
  REQUIRE(std::abs(y[0] - (1.0 + 0.7 * 3.0)) < 1e-12);  // min of the pair

  // swap symmetry
  Tensor y_swapped = td_targets(q2, q1, next_br, actions, r, {0}, 0.7);
  REQUIRE(y[0] == y_swapped[0]);

  // gamma = 0 and terminal transitions both reduce to the reward
  REQUIRE(td_targets(q1, q2, next_br, actions, r, {0}, 0.0)[0] == 1.0);
  REQUIRE(td_targets(q1, q2, next_br, actions, r, {1}, 0.7)[0] == 1.0);

  REQUIRE_THROWS_AS(td_targets(q1, q2, next_br, actions, r, {0}, 1.0), std::domain_error);
  REQUIRE_THROWS_AS(td_targets(q1, q2, next_br, actions, r, {0}, -0.1), std::domain_error);
}

TEST_CASE("swap symmetry holds for arbitrary twin critics") {
  Rng rng(2);
  CriticNet q1("a", kD, 6, rng), q2("b", kD, 6, rng);
  Tensor next_br = random_mat(7, kD, rng);
  Tensor actions = random_mat(7, 3, rng);
  Tensor r({7, 1});
  for (std::size_t i = 0; i < 7; ++i) r[i] = rng.uniform();
  std::vector<char> done{0, 1, 0, 0, 1, 0, 0};
  Tensor ya = td_targets(q1, q2, next_br, actions, r, done, 0.5);
  Tensor yb = td_targets(q2, q1, next_br, actions, r, done, 0.5);
  for (std::size_t i = 0; i < 7; ++i) REQUIRE(ya[i] == yb[i]);
}

TEST_CASE("temporal-difference loss arithmetic") {
  Tape t;
  Var q1 = t.input(Tensor({1, 1}, {0.0}));
  Var q2 = t.input(Tensor({1, 1}, {2.0}));
  Tensor y({1, 1}, {1.0});
  REQUIRE(std::abs(td_loss(t, q1, q2, y).value().item() - 2.0) < 1e-12);

  Var same = t.input(Tensor({3, 1}, {1.0, 2.0, 3.0}));
  Tensor y3({3, 1}, {1.0, 2.0, 3.0});
  REQUIRE(td_loss(t, same, same, y3).value().item() == 0.0);
}

TEST_CASE("decomposition loss arithmetic") {
  Tape t;
  // the pinned worked example: R=(1,1,1), Q=2, w=(0.5,0.25,0.25,0) -> 1/6
  Var q = t.input(Tensor({1, 1}, {2.0}));
  Var w = t.input(Tensor({1, 4}, {0.5, 0.25, 0.25, 0.0}));
  Tensor r({1, 3}, {1.0, 1.0, 1.0});
  REQUIRE(std::abs(decomp_loss(t, q, w, r).value().item() - 1.0 / 6.0) < 1e-12);

  // exact component match -> zero
  Var w2 = t.input(Tensor({1, 4}, {0.1, 0.2, 0.3, 0.4}));
  Tensor r2({1, 3}, {0.2, 0.4, 0.6});  // w_i * Q with Q = 2
  REQUIRE(decomp_loss(t, q, w2, r2).value().item() == 0.0);

  // all overflow: loss is the raw reward energy
  Var w3 = t.input(Tensor({1, 4}, {0.0, 0.0, 0.0, 1.0}));
  Tensor r3({1, 3}, {0.3, 0.6, 0.9});
  REQUIRE(std::abs(decomp_loss(t, q, w3, r3).value().item() -
                   (0.09 + 0.36 + 0.81) / 3.0) < 1e-12);
}

TEST_CASE("critic loss mixes at the configured ratio") {
  Tape t;
  Var td = t.input(Tensor::scalar(2.0));
  Var dc = t.input(Tensor::scalar(1.0));
  REQUIRE(std::abs(critic_loss(td, dc, 0.75).value().item() - 1.75) < 1e-12);
  REQUIRE(critic_loss(td, dc, 1.0).value().item() == 2.0);
  REQUIRE(critic_loss(td, dc, 0.0).value().item() == 1.0);
  REQUIRE_THROWS_AS(critic_loss(td, dc, 1.5), std::domain_error);
}

TEST_CASE("weight head stays on the simplex and decompose partitions q") {
  Rng rng(3);
  CriticNet c("c", kD, 6, rng);
  Tape t;
  Var br = t.input(random_mat(9, kD, rng));
  Var a = t.input(random_mat(9, 3, rng));
  auto out = c.forward(t, br, a);
  for (std::size_t r = 0; r < 9; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += out.w.value().at(r, i);
    REQUIRE(std::abs(s - 1.0) < 1e-12);
  }

  auto parts = decompose(1.7, {1.0, 0.0, 0.0, 0.0});
  REQUIRE(parts[0] == 1.7);
  REQUIRE(parts[1] == 0.0);
  auto zero = decompose(0.0, {0.25, 0.25, 0.25, 0.25});
  for (double v : zero) REQUIRE(v == 0.0);
  auto mix = decompose(2.0, {0.1, 0.2, 0.3, 0.4});
  REQUIRE(std::abs(mix[0] + mix[1] + mix[2] + mix[3] - 2.0) < 1e-12);
}

TEST_CASE("full critic objective gradient matches finite differences") {
  Rng rng(4);
  CriticNet q1("q1", kD, 6, rng), q2("q2", kD, 6, rng);
  Tensor br = random_mat(4, kD, rng);
  Tensor actions = random_mat(4, 3, rng);
  Tensor y({4, 1});
  Tensor rewards({4, 3});
  for (std::size_t i = 0; i < 4; ++i) y[i] = rng.uniform();
  for (std::size_t i = 0; i < rewards.size(); ++i) rewards[i] = rng.uniform();

  auto build = [&](Tape& t) {
    Var brv = t.input(br);
    Var av = t.input(actions);
    auto o1 = q1.forward(t, brv, av);
    Var o2 = q2.q_only(t, brv, av);
    Var td = td_loss(t, o1.q, o2, y);
    Var dc = decomp_loss(t, o1.q, o1.w, rewards);
    return critic_loss(td, dc, 0.75);
  };
  std::vector<Param*> params = q1.all();
  for (Param* p : q2.all()) params.push_back(p);
  auto rep = oracle::check_param_gradients(build, params, 1e-5, 6);
  INFO("max rel err " << rep.max_rel_err << " over " << rep.checks << " checks");
  REQUIRE(rep.checks >= 60);
  REQUIRE(rep.max_rel_err < 1e-4);
}

TEST_CASE("target smoothing keeps actions in the box with bounded noise") {
  NoiseConfig nc;  // 0.2 noise, 0.5 clip
  Tensor pi({100, 3});
  Rng fill(5);
  for (std::size_t i = 0; i < pi.size(); ++i) pi[i] = fill.uniform();
  Rng r1(6), r2(6);
  Tensor a = smooth_target_actions(pi, nc, r1);
  Tensor b = smooth_target_actions(pi, nc, r2);
  bool any_moved = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i] >= 0.0);
    REQUIRE(a[i] <= 1.0);
    REQUIRE(std::abs(a[i] - pi[i]) <= 0.5 + 1e-15);
    REQUIRE(a[i] == b[i]);  // same rng stream, same smoothing
    any_moved = any_moved || a[i] != pi[i];
  }
  REQUIRE(any_moved);
}

TEST_CASE("polyak blend of a full network") {
  Rng rng(7);
  CriticNet online("o", kD, 6, rng), target("t", kD, 6, rng);
  CriticNet before("b", kD, 6, rng);
  before.copy_from(target);
  target.polyak_from(online, 0.005);
  auto tb = before.all();
  auto tt = target.all();
  auto to = online.all();
  for (std::size_t i = 0; i < tt.size(); ++i)
    for (std::size_t j = 0; j < tt[i]->value.size(); ++j)
      REQUIRE(std::abs(tt[i]->value[j] - (0.005 * to[i]->value[j] + 0.995 * tb[i]->value[j])) <
              1e-15);
}
