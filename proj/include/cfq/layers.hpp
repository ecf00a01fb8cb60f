#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cfq/autodiff.hpp"
#include "cfq/optim.hpp"
#include "cfq/rng.hpp"
#include "cfq/tensor.hpp"

namespace cfq {

inline Tensor uniform_init(std::vector<std::size_t> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

struct DenseParams {
  Param W, b;

  DenseParams() = default;
  DenseParams(const std::string& prefix, std::size_t out, std::size_t in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    W = Param(prefix + ".W", uniform_init({out, in}, bound, rng));
    b = Param(prefix + ".b", uniform_init({out}, bound, rng));
  }

  ad::Var forward(ad::Tape& t, ad::Var x) { return ad::linear(x, t.param(W), t.param(b)); }

  std::vector<Param*> all() { return {&W, &b}; }
};

// One recurrent cell with explicit per-gate weights. State tensors are
// [B x hidden] (or [hidden] unbatched).
struct LstmParams {
  std::size_t input_size = 0, hidden_size = 0;
  Param Wi, Wf, Wg, Wo;  // input->gate, [hidden x input]
  Param Ui, Uf, Ug, Uo;  // hidden->gate, [hidden x hidden]
  Param bi, bf, bg, bo;

  LstmParams() = default;
  LstmParams(const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng)
      : input_size(input), hidden_size(hidden) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    auto w = [&](const char* n) { return Param(prefix + "." + n, uniform_init({hidden, input}, bound, rng)); };
    auto u = [&](const char* n) { return Param(prefix + "." + n, uniform_init({hidden, hidden}, bound, rng)); };
    auto b = [&](const char* n) { return Param(prefix + "." + n, uniform_init({hidden}, bound, rng)); };
    Wi = w("Wi"); Wf = w("Wf"); Wg = w("Wg"); Wo = w("Wo");
    Ui = u("Ui"); Uf = u("Uf"); Ug = u("Ug"); Uo = u("Uo");
    bi = b("bi"); bf = b("bf"); bg = b("bg"); bo = b("bo");
  }

  struct State {
    ad::Var h, c;
  };

  State zero_state(ad::Tape& t, std::size_t batch) const {
    Tensor z = batch ? Tensor({batch, hidden_size}) : Tensor({hidden_size});
    ad::Var h = t.input(z);
    ad::Var c = t.input(std::move(z));
    return {h, c};
  }

  State step(ad::Tape& t, ad::Var x, const State& s) {
    using namespace ad;
    Var i = sigmoid(add(linear(x, t.param(Wi), t.param(bi)), affine(s.h, t.param(Ui))));
    Var f = sigmoid(add(linear(x, t.param(Wf), t.param(bf)), affine(s.h, t.param(Uf))));
    Var g = tanh_(add(linear(x, t.param(Wg), t.param(bg)), affine(s.h, t.param(Ug))));
    Var o = sigmoid(add(linear(x, t.param(Wo), t.param(bo)), affine(s.h, t.param(Uo))));
    Var c = add(mul(f, s.c), mul(i, g));
    Var h = mul(o, tanh_(c));
    return {h, c};
  }

  // Runs the full window and returns the last hidden state. xs holds one
  // [B x input] tensor per time step.
  ad::Var run(ad::Tape& t, const std::vector<ad::Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("lstm: empty sequence");
    State s = zero_state(t, xs[0].value().rank() == 2 ? xs[0].value().rows() : 0);
    for (const ad::Var& x : xs) s = step(t, x, s);
    return s.h;
  }

  std::vector<Param*> all() {
    return {&Wi, &Wf, &Wg, &Wo, &Ui, &Uf, &Ug, &Uo, &bi, &bf, &bg, &bo};
  }
};

}  // namespace cfq
