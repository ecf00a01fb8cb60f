#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfq/autodiff.hpp"
#include "cfq/critic.hpp"
#include "cfq/data.hpp"
#include "cfq/layers.hpp"
#include "cfq/policy_expert.hpp"

namespace cfq {

// Deterministic policy over the balanced state, sigmoid-bounded to the
// normalized action box.
struct ActorNet {
  DenseParams l1, l2, out;

  ActorNet() = default;
  ActorNet(const std::string& prefix, std::size_t d, std::size_t hidden, Rng& rng)
      : l1(prefix + ".l1", hidden, d, rng),
        l2(prefix + ".l2", hidden, hidden, rng),
        out(prefix + ".out", kActionDim, hidden, rng) {}

  ad::Var act(ad::Tape& t, ad::Var br) {
    return ad::sigmoid(out.forward(t, ad::relu(l2.forward(t, ad::relu(l1.forward(t, br))))));
  }

  std::vector<Param*> all() {
    std::vector<Param*> v;
    for (auto* layer : {&l1, &l2, &out})
      for (Param* p : layer->all()) v.push_back(p);
    return v;
  }

  void copy_from(ActorNet& src) {
    auto dst = all();
    auto s = src.all();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = s[i]->value;
  }

  void polyak_from(ActorNet& src, double tau) {
    auto dst = all();
    auto s = src.all();
    for (std::size_t i = 0; i < dst.size(); ++i) polyak_update(*dst[i], *s[i], tau);
  }
};

struct ActorLossParts {
  ad::Var loss;
  double lambda = 0.0;
  double mean_abs_q = 0.0;
};

// TD3+BC objective with an externally fixed critic scale:
// -lambda * mean(Q1(s, pi(s))) + mean ||pi(s) - anchor||^2.
inline ad::Var actor_loss_fixed_lambda(ad::Tape& t, ActorNet& actor, CriticNet& q1, ad::Var br,
                                       const Tensor& anchors, double lambda) {
  using namespace ad;
  Var pi = actor.act(t, br);
  Var q = q1.q_only(t, br, pi);
  const std::size_t B = pi.value().rows();
  Var bc = scale(sum(square(sub(pi, t.input(anchors)))), 1.0 / static_cast<double>(B));
  return add(scale(mean_all(q), -lambda), bc);
}

// Full objective: lambda = bc_alpha / mean|Q1(s, pi(s))| recomputed per batch
// and held constant for the backward pass. `anchors` are logged or
// counterfactual actions chosen upstream.
inline ActorLossParts actor_loss(ad::Tape& t, ActorNet& actor, CriticNet& q1, ad::Var br,
                                 const Tensor& anchors, double bc_alpha) {
  if (bc_alpha <= 0.0) throw std::domain_error("actor_loss: bc_alpha must be positive");
  using namespace ad;
  Var pi = actor.act(t, br);
  Var q = q1.q_only(t, br, pi);
  double mean_abs = 0.0;
  for (std::size_t i = 0; i < q.value().size(); ++i) mean_abs += std::abs(q.value()[i]);
  mean_abs /= static_cast<double>(q.value().size());
  // lambda is a plain number: no gradient flows through the normalizer.
  // Guard against a vanishing normalizer at initialization.
  const double lambda = bc_alpha / std::max(mean_abs, 1e-6);
  const std::size_t B = pi.value().rows();
  Var bc = scale(sum(square(sub(pi, t.input(anchors)))), 1.0 / static_cast<double>(B));
  return {add(scale(mean_all(q), -lambda), bc), lambda, mean_abs};
}

// BC anchor selection: the logged action with probability 1 - epsilon, else
// the counterfactual action of a uniformly drawn other policy's expert.
inline ActionVec select_anchor(const WindowRef& w, std::vector<PolicyExpert>& experts,
                               double epsilon, std::size_t cap, Rng& rng) {
  if (epsilon < 0.0 || epsilon > 1.0) throw std::domain_error("select_anchor: bad epsilon");
  if (experts.size() < 2) throw std::invalid_argument("select_anchor: need >= 2 policies");
  if (rng.uniform() >= epsilon) return w.last().action;
  const int own = w.policy_id();
  const std::size_t k = rng.index(experts.size() - 1);
  const int cp = static_cast<int>(k) >= own ? static_cast<int>(k) + 1 : static_cast<int>(k);
  return counterfactual_action(experts, cp, w, cap);
}

// Linear ramp within one discount phase; pure in (step, phase span).
inline double epsilon_schedule(double eps_start, double eps_end, long long step_in_phase,
                               long long phase_len) {
  if (phase_len <= 1) return eps_end;
  if (step_in_phase <= 0) return eps_start;
  if (step_in_phase >= phase_len - 1) return eps_end;
  const double f = static_cast<double>(step_in_phase) / static_cast<double>(phase_len - 1);
  return eps_start + (eps_end - eps_start) * f;
}

}  // namespace cfq
