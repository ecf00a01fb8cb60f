#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cfq {

// Feature layout of the 12-dimensional player state.
enum FeatureIndex : std::size_t {
  kSkill = 0,
  kIntent = 1,
  kBankroll = 2,
  kWinRate = 3,
  kDropAdherence = 4,
  kSessionFreq = 5,
  kLossStreak = 6,
  kEntryFeeTier = 7,
  kPlaySpeed = 8,
  kInvalidDeclareRate = 9,
  kTenure = 10,
  kVolatility = 11,
};

inline constexpr std::size_t kFeatureDim = 12;
inline constexpr std::size_t kActionDim = 3;
inline constexpr std::size_t kRewardDim = 3;

using FeatureVec = std::array<double, kFeatureDim>;
using ActionVec = std::array<double, kActionDim>;   // (games, target_score, cash_reward)
using RewardVec = std::array<double, kRewardDim>;   // (dwell, engagement, return_time)

struct Transition {
  int t = 0;
  int policy_id = 0;
  FeatureVec x{};
  ActionVec prev_action{};  // zero sentinel at t = 0
  RewardVec prev_reward{};  // zero sentinel at t = 0
  ActionVec action{};
  RewardVec reward{};
  bool done = false;
};

struct Episode {
  long long id = 0;
  std::vector<Transition> steps;

  int policy_id() const { return steps.empty() ? -1 : steps.front().policy_id; }
};

struct Buffer {
  std::vector<Episode> episodes;
  int n_policies = 0;

  std::size_t transition_count() const {
    std::size_t n = 0;
    for (const Episode& e : episodes) n += e.steps.size();
    return n;
  }

  // Episode indices per policy; the partition is exact and total.
  std::vector<std::vector<std::size_t>> partition() const {
    std::vector<std::vector<std::size_t>> part(static_cast<std::size_t>(n_policies));
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      const int p = episodes[i].policy_id();
      if (p < 0 || p >= n_policies)
        throw std::runtime_error("buffer: episode " + std::to_string(episodes[i].id) +
                                 " has policy_id outside [0, n)");
      part[static_cast<std::size_t>(p)].push_back(i);
    }
    return part;
  }
};

// --- reward formulas ---

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Days since the challenge was shown -> [0,1]; clamped at 6 days.
inline double reward_engagement(double b) {
  if (b < 0.0) throw std::domain_error("reward_engagement: negative days");
  const double bc = b > 6.0 ? 6.0 : b;
  return (6.0 - bc) / 6.0;
}

// Days since the challenge was completed, valid on [0, 6].
inline double reward_return_time(double a) {
  if (a < 0.0 || a > 6.0) throw std::domain_error("reward_return_time: days outside [0,6]");
  return 1.0 - std::sin((6.0 - a) / 2.0);
}

inline double scalarize_reward(const RewardVec& r, const RewardVec& weights = {1.0, 1.0, 1.0}) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < kRewardDim; ++i) {
    if (weights[i] < 0.0) throw std::domain_error("scalarize_reward: negative weight");
    num += weights[i] * r[i];
    den += weights[i];
  }
  if (den <= 0.0) throw std::domain_error("scalarize_reward: weights sum to zero");
  return num / den;
}

// --- buffer file I/O ---
// One transition per line:
//   episode_id t policy_id x[12] prev_action[3] prev_reward[3] action[3] reward[3] done
// doubles at 17 significant digits for a bit-exact round trip.

inline void write_buffer(const Buffer& buffer, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_buffer: cannot open " + path);
  char num[32];
  auto put = [&](double v) {
    std::snprintf(num, sizeof(num), "%.17g", v);
    out << ' ' << num;
  };
  for (const Episode& ep : buffer.episodes) {
    for (const Transition& tr : ep.steps) {
      out << ep.id << ' ' << tr.t << ' ' << tr.policy_id;
      for (double v : tr.x) put(v);
      for (double v : tr.prev_action) put(v);
      for (double v : tr.prev_reward) put(v);
      for (double v : tr.action) put(v);
      for (double v : tr.reward) put(v);
      out << ' ' << (tr.done ? 1 : 0) << '\n';
    }
  }
  if (!out) throw std::runtime_error("write_buffer: write failed on " + path);
}

inline Buffer read_buffer(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_buffer: cannot open " + path);
  Buffer buf;
  std::string line;
  std::size_t lineno = 0;
  long long cur_id = 0;
  bool have_episode = false;
  int max_policy = -1;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error("read_buffer: parse error at line " + std::to_string(lineno) + ": " +
                             what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    long long eid;
    Transition tr;
    int done_flag;
    if (!(ls >> eid >> tr.t >> tr.policy_id)) fail("bad episode/step/policy fields");
    auto read_arr = [&](double* p, std::size_t n, const char* name) {
      for (std::size_t i = 0; i < n; ++i)
        if (!(ls >> p[i])) fail(std::string("truncated ") + name + " field");
    };
    read_arr(tr.x.data(), kFeatureDim, "state");
    read_arr(tr.prev_action.data(), kActionDim, "prev_action");
    read_arr(tr.prev_reward.data(), kRewardDim, "prev_reward");
    read_arr(tr.action.data(), kActionDim, "action");
    read_arr(tr.reward.data(), kRewardDim, "reward");
    if (!(ls >> done_flag)) fail("missing done flag");
    if (done_flag != 0 && done_flag != 1) fail("done flag must be 0 or 1");
    std::string extra;
    if (ls >> extra) fail("trailing fields");
    tr.done = done_flag == 1;

    if (!have_episode || eid != cur_id) {
      buf.episodes.push_back(Episode{eid, {}});
      cur_id = eid;
      have_episode = true;
    }
    Episode& ep = buf.episodes.back();
    if (!ep.steps.empty() && ep.steps.front().policy_id != tr.policy_id)
      fail("policy_id changes mid-episode");
    if (tr.policy_id < 0) fail("negative policy_id");
    ep.steps.push_back(tr);
    max_policy = std::max(max_policy, tr.policy_id);
  }
  buf.n_policies = max_policy + 1;
  return buf;
}

// Deterministic per-policy holdout: every k-th episode of each policy goes to
// the second buffer, k chosen from the fraction.
inline std::pair<Buffer, Buffer> split_buffer(const Buffer& buffer, double holdout_frac) {
  if (holdout_frac <= 0.0 || holdout_frac >= 1.0)
    throw std::domain_error("split_buffer: fraction must be in (0,1)");
  const std::size_t k = static_cast<std::size_t>(std::max(2.0, std::round(1.0 / holdout_frac)));
  Buffer train, held;
  train.n_policies = held.n_policies = buffer.n_policies;
  std::vector<std::size_t> seen(static_cast<std::size_t>(buffer.n_policies), 0);
  for (const Episode& ep : buffer.episodes) {
    const auto p = static_cast<std::size_t>(ep.policy_id());
    ((seen[p]++ % k == k - 1) ? held : train).episodes.push_back(ep);
  }
  return {std::move(train), std::move(held)};
}

// Keep only the first `fraction` of each policy's episodes (paired-run data
// subsets share identical prefixes by construction).
inline Buffer fraction_buffer(const Buffer& buffer, double fraction) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::domain_error("fraction_buffer: fraction must be in (0,1]");
  const auto part = buffer.partition();
  std::vector<bool> keep(buffer.episodes.size(), false);
  for (const auto& idxs : part) {
    const std::size_t n = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idxs.size()))));
    for (std::size_t i = 0; i < n && i < idxs.size(); ++i) keep[idxs[i]] = true;
  }
  Buffer out;
  out.n_policies = buffer.n_policies;
  for (std::size_t i = 0; i < buffer.episodes.size(); ++i)
    if (keep[i]) out.episodes.push_back(buffer.episodes[i]);
  return out;
}

}  // namespace cfq
