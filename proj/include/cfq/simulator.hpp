#pragma once

#include <stdexcept>
#include <string>

#include "cfq/data.hpp"
#include "cfq/rng.hpp"

namespace cfq {

struct SimConfig {
  int n_policies = 3;
  int episodes_per_policy = 2000;
  int min_len = 5;
  int max_len = 30;
  double overlap_frac = 0.15;   // players whose shifted dims land in the shared region
  double shift_noise = 0.03;    // spread of the policy-conditioned feature shift
  double action_noise = 0.02;   // logging-policy action jitter
  double reward_noise = 0.03;   // response-model observation noise

  void validate() const {
    if (n_policies < 2) throw std::domain_error("sim: n_policies must be >= 2");
    if (episodes_per_policy < 1) throw std::domain_error("sim: episodes_per_policy must be >= 1");
    if (min_len < 1 || max_len < min_len) throw std::domain_error("sim: bad episode length range");
    if (overlap_frac < 0.0 || overlap_frac > 1.0) throw std::domain_error("sim: bad overlap_frac");
    if (action_noise < 0.0 || reward_noise < 0.0 || shift_noise < 0.0)
      throw std::domain_error("sim: noise scales must be >= 0");
  }
};

namespace sim {

// Hidden per-player traits driving the response model. Independent of the
// assigned policy, so outcome differences across policies come from actions
// and state drift only.
struct Latents {
  double skill = 0.5;
  double intent = 0.5;
  double churn = 0.5;
};

// What each logging policy does with a player state. Policy 0 scales the
// challenge with observed performance, policy 1 with the intent score, and
// the last policy offers no challenge at all.
inline ActionVec logging_action(int policy_id, int n_policies, const FeatureVec& x, double noise,
                                Rng& rng) {
  ActionVec a{};
  if (policy_id == n_policies - 1) return a;  // exact (0,0,0), no jitter
  if (policy_id == 0) {
    a[0] = 0.35 + 0.50 * x[kWinRate];
    a[1] = 0.30 + 0.55 * x[kSkill];
    a[2] = 0.15 + 0.50 * x[kBankroll];
  } else {
    a[0] = 0.20 + 0.35 * x[kIntent];
    a[1] = 0.15 + 0.30 * x[kIntent];
    a[2] = 0.85 - 0.60 * x[kIntent];
  }
  for (double& v : a) v = clamp01(v + rng.normal(0.0, noise));
  return a;
}

// Raw outcome qualities in [0,1] before the reward formulas are applied.
struct Outcome {
  double dwell = 0.0;
  double engage_quality = 0.0;  // q; days-to-open b = 6(1-q)
  double return_quality = 0.0;  // v; days-to-return a = 3 + 3v
};

// The reward pathway reads only the latent traits and the chosen action.
// Pressure beyond a skill-dependent cap backfires; cash sways low-intent
// players and leaves high-intent players cold.
inline Outcome respond(const Latents& L, const ActionVec& a, double noise, Rng& rng) {
  const double games = a[0], target = a[1], cash = a[2];
  const double press = 0.5 * games + 0.5 * target * (1.0 - L.skill);
  const double cap = 0.35 + 0.45 * L.skill;
  const double over = press > cap ? press - cap : 0.0;
  const double eff = press - 1.6 * over;
  const double cash_pull = cash * (0.55 * (1.0 - L.intent) - 0.30 * std::max(0.0, L.intent - 0.5));

  Outcome o;
  o.engage_quality = clamp01(0.10 + 1.1 * eff * (0.30 + 0.70 * L.intent) + cash_pull -
                             0.15 * L.churn + rng.normal(0.0, noise));
  o.dwell = clamp01(0.20 + 0.10 * L.intent + 0.75 * (1.0 - L.intent) * eff +
                    0.40 * (1.0 - L.intent) * cash + rng.normal(0.0, noise));
  o.return_quality = clamp01(0.30 + 0.35 * L.intent + 0.25 * (1.0 - L.churn) - 1.3 * over +
                             rng.normal(0.0, noise));
  return o;
}

inline RewardVec outcome_to_reward(const Outcome& o) {
  RewardVec r{};
  r[0] = o.dwell;
  r[1] = reward_engagement(6.0 * (1.0 - o.engage_quality));
  // a = 3 + 3v keeps the formula on its monotone branch: higher v, higher reward.
  r[2] = reward_return_time(3.0 + 3.0 * o.return_quality);
  return r;
}

inline FeatureVec initial_features(const Latents& L, int policy_id, int n_policies, bool overlap,
                                   double shift_noise, Rng& rng) {
  FeatureVec x{};
  x[kSkill] = clamp01(L.skill + rng.normal(0.0, 0.05));
  x[kIntent] = clamp01(L.intent + rng.normal(0.0, 0.05));
  x[kBankroll] = clamp01(0.30 + 0.40 * L.skill - 0.20 * L.churn + rng.normal(0.0, 0.10));
  x[kWinRate] = clamp01(0.50 + 0.70 * (L.skill - 0.5) + rng.normal(0.0, 0.08));
  x[kDropAdherence] = clamp01(0.50 + 0.30 * L.intent - 0.30 * L.churn + rng.normal(0.0, 0.10));
  x[kSessionFreq] = clamp01(0.20 + 0.60 * L.intent + rng.normal(0.0, 0.08));
  x[kLossStreak] = clamp01(0.50 - 0.40 * L.skill + rng.normal(0.0, 0.10));
  x[kEntryFeeTier] = clamp01(0.30 + 0.50 * x[kBankroll] + rng.normal(0.0, 0.05));
  x[kPlaySpeed] = clamp01(0.30 + 0.40 * L.skill + rng.normal(0.0, 0.10));
  x[kInvalidDeclareRate] = clamp01(0.30 - 0.25 * L.skill + rng.normal(0.0, 0.05));
  // The two policy-signature dimensions: tight per-policy bands, except for
  // the overlap players who land in a shared central region.
  for (std::size_t d : {static_cast<std::size_t>(kTenure), static_cast<std::size_t>(kVolatility)}) {
    const double center = overlap ? rng.uniform(0.3, 0.7)
                                  : (static_cast<double>(policy_id) + 0.5) /
                                        static_cast<double>(n_policies);
    x[d] = clamp01(center + rng.normal(0.0, shift_noise));
  }
  return x;
}

inline void drift_features(FeatureVec& x, const Latents& L, const Outcome& o, const ActionVec& a,
                           Rng& rng) {
  x[kWinRate] = clamp01(x[kWinRate] + 0.10 * (L.skill - x[kWinRate]) + rng.normal(0.0, 0.02));
  x[kLossStreak] = clamp01(x[kLossStreak] + 0.20 * (0.5 - o.engage_quality) + rng.normal(0.0, 0.02));
  x[kSessionFreq] = clamp01(x[kSessionFreq] + 0.05 * (o.engage_quality - 0.5) + rng.normal(0.0, 0.01));
  x[kBankroll] = clamp01(x[kBankroll] + 0.05 * a[2] - 0.02 * a[0] + rng.normal(0.0, 0.01));
  x[kDropAdherence] = clamp01(x[kDropAdherence] + 0.05 * (o.return_quality - 0.5) + rng.normal(0.0, 0.01));
  for (std::size_t d : {static_cast<std::size_t>(kTenure), static_cast<std::size_t>(kVolatility)})
    x[d] = clamp01(x[d] + rng.normal(0.0, 0.005));
}

}  // namespace sim

inline Buffer simulate(const SimConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Buffer buf;
  buf.n_policies = cfg.n_policies;
  const long long total =
      static_cast<long long>(cfg.n_policies) * cfg.episodes_per_policy;
  buf.episodes.reserve(static_cast<std::size_t>(total));
  for (long long e = 0; e < total; ++e) {
    Rng rng(stream_seed(seed, "episode-" + std::to_string(e)));
    const int policy = static_cast<int>(e % cfg.n_policies);

    sim::Latents L;
    L.skill = rng.uniform();
    L.intent = rng.uniform();
    L.churn = rng.uniform();
    const bool overlap = rng.uniform() < cfg.overlap_frac;
    const int len = cfg.min_len + static_cast<int>(rng.index(
                                      static_cast<std::size_t>(cfg.max_len - cfg.min_len + 1)));

    Episode ep;
    ep.id = e;
    ep.steps.reserve(static_cast<std::size_t>(len));
    FeatureVec x =
        sim::initial_features(L, policy, cfg.n_policies, overlap, cfg.shift_noise, rng);
    ActionVec prev_a{};
    RewardVec prev_r{};
    for (int t = 0; t < len; ++t) {
      Transition tr;
      tr.t = t;
      tr.policy_id = policy;
      tr.x = x;
      tr.prev_action = prev_a;
      tr.prev_reward = prev_r;
      tr.action = sim::logging_action(policy, cfg.n_policies, x, cfg.action_noise, rng);
      const sim::Outcome o = sim::respond(L, tr.action, cfg.reward_noise, rng);
      tr.reward = sim::outcome_to_reward(o);
      tr.done = (t == len - 1);
      ep.steps.push_back(tr);
      prev_a = tr.action;
      prev_r = tr.reward;
      sim::drift_features(x, L, o, tr.action, rng);
    }
    buf.episodes.push_back(std::move(ep));
  }
  return buf;
}

}  // namespace cfq
