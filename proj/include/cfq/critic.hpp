#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cfq/autodiff.hpp"
#include "cfq/data.hpp"
#include "cfq/layers.hpp"
#include "cfq/rng.hpp"

namespace cfq {

// One Q-network over concat(balanced state, action) with two heads off the
// shared penultimate layer: the scalar value and the simplex of per-objective
// weights (three reward components plus an overflow slot).
struct CriticNet {
  DenseParams l1, l2, q_head, w_head;

  CriticNet() = default;
  CriticNet(const std::string& prefix, std::size_t d, std::size_t hidden, Rng& rng)
      : l1(prefix + ".l1", hidden, d + kActionDim, rng),
        l2(prefix + ".l2", hidden, hidden, rng),
        q_head(prefix + ".q", 1, hidden, rng),
        w_head(prefix + ".w", 4, hidden, rng) {}

  struct Out {
    ad::Var q;  // [B x 1]
    ad::Var w;  // [B x 4], rows on the simplex
  };

  Out forward(ad::Tape& t, ad::Var br, ad::Var action) {
    ad::Var h = ad::relu(l2.forward(t, ad::relu(l1.forward(t, ad::concat_cols(br, action)))));
    return {q_head.forward(t, h), ad::softmax(w_head.forward(t, h))};
  }

  ad::Var q_only(ad::Tape& t, ad::Var br, ad::Var action) {
    ad::Var h = ad::relu(l2.forward(t, ad::relu(l1.forward(t, ad::concat_cols(br, action)))));
    return q_head.forward(t, h);
  }

  std::vector<Param*> all() {
    std::vector<Param*> v;
    for (auto* layer : {&l1, &l2, &q_head, &w_head})
      for (Param* p : layer->all()) v.push_back(p);
    return v;
  }

  void copy_from(CriticNet& src) {
    auto dst = all();
    auto s = src.all();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = s[i]->value;
  }

  void polyak_from(CriticNet& src, double tau) {
    auto dst = all();
    auto s = src.all();
    for (std::size_t i = 0; i < dst.size(); ++i) polyak_update(*dst[i], *s[i], tau);
  }
};

struct NoiseConfig {
  double policy_noise = 0.2;
  double noise_clip = 0.5;
};

inline double clip(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Smoothed target action: target-actor output plus clipped noise, clipped to
// the action box.
inline Tensor smooth_target_actions(const Tensor& pi, const NoiseConfig& nc, Rng& rng) {
  Tensor out = pi;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double eps = clip(rng.normal(0.0, nc.policy_noise), -nc.noise_clip, nc.noise_clip);
    out[i] = clip(out[i] + eps, 0.0, 1.0);
  }
  return out;
}

// y = r + gamma * min(Q1', Q2') at the smoothed target action; y = r on
// terminal transitions. Pure evaluation, no gradients retained.
inline Tensor td_targets(CriticNet& target_q1, CriticNet& target_q2, const Tensor& next_br,
                         const Tensor& target_actions, const Tensor& r_scalar,
                         const std::vector<char>& done, double gamma) {
  if (gamma < 0.0 || gamma >= 1.0) throw std::domain_error("td_targets: gamma outside [0,1)");
  const std::size_t B = next_br.rows();
  ad::Tape t;
  ad::Var br = t.input(next_br);
  ad::Var a = t.input(target_actions);
  ad::Var q1 = target_q1.q_only(t, br, a);
  ad::Var q2 = target_q2.q_only(t, br, a);
  Tensor y({B, 1});
  for (std::size_t i = 0; i < B; ++i) {
    const double qmin = std::min(q1.value()[i], q2.value()[i]);
    y[i] = r_scalar[i] + (done[i] ? 0.0 : gamma * qmin);
  }
  return y;
}

// Mean over the batch of (y - Q1)^2 + (y - Q2)^2; y enters as a constant.
inline ad::Var td_loss(ad::Tape& t, ad::Var q1, ad::Var q2, const Tensor& y) {
  using namespace ad;
  Var yv = t.input(y);
  Var e1 = square(sub(q1, yv));
  Var e2 = square(sub(q2, yv));
  return mean_all(add(e1, e2));
}

// Mean over the batch of (1/3) sum_i (R_i - w_i * Q)^2 for the three reward
// components; the fourth weight only participates through the softmax.
inline ad::Var decomp_loss(ad::Tape& t, ad::Var q, ad::Var w, const Tensor& rewards) {
  using namespace ad;
  if (rewards.cols() != kRewardDim) throw std::invalid_argument("decomp_loss: reward width");
  Var w3 = slice_cols(w, 0, kRewardDim);
  Var qt = tile_cols(q, kRewardDim);
  Var err = square(sub(t.input(rewards), mul(w3, qt)));
  return scale(sum(err), 1.0 / (static_cast<double>(kRewardDim) *
                                static_cast<double>(rewards.rows())));
}

inline ad::Var critic_loss(ad::Var td, ad::Var decomp, double mix_alpha) {
  if (mix_alpha < 0.0 || mix_alpha > 1.0) throw std::domain_error("critic_loss: bad mix_alpha");
  return ad::add(ad::scale(td, mix_alpha), ad::scale(decomp, 1.0 - mix_alpha));
}

// Explainability readout: the per-objective shares of a scalar Q.
inline std::array<double, 4> decompose(double q, const std::array<double, 4>& w) {
  return {w[0] * q, w[1] * q, w[2] * q, w[3] * q};
}

}  // namespace cfq
