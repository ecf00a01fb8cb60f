#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cfq/autodiff.hpp"
#include "cfq/tensor.hpp"

namespace cfq {

struct AdamState {
  Tensor m, v;
  long long step = 0;
};

struct Param {
  std::string name;
  Tensor value;
  AdamState adam;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    adam.m = Tensor(value.shape());
    adam.v = Tensor(value.shape());
  }
};

namespace ad {

inline Var Tape::param(cfq::Param& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return Var(this, it->second);
  Var v = make(p.value, {});
  bound_.emplace(&p, v.id());
  return v;
}

}  // namespace ad

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One Adam update with bias correction. No-op when the parameter received no
// gradient on this tape.
inline void adam_step(Param& p, const ad::Tape& tape, const AdamConfig& cfg) {
  const Tensor* g = tape.grad_of(p);
  if (!g) return;
  AdamState& s = p.adam;
  s.step += 1;
  const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double gi = (*g)[i];
    s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * gi;
    s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * gi * gi;
    const double mhat = s.m[i] / b1t;
    const double vhat = s.v[i] / b2t;
    p.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

inline void adam_step(std::vector<Param*>& params, const ad::Tape& tape, const AdamConfig& cfg) {
  for (Param* p : params) adam_step(*p, tape, cfg);
}

// target <- tau * online + (1 - tau) * target
inline void polyak_update(Param& target, const Param& online, double tau) {
  check_same_shape(target.value, online.value, "polyak_update");
  for (std::size_t i = 0; i < target.value.size(); ++i)
    target.value[i] = tau * online.value[i] + (1.0 - tau) * target.value[i];
}

}  // namespace cfq
