#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfq/trainer.hpp"

namespace cfq {

// --- distribution distance ---

// 1-D W1 via sorted quantile coupling; exact optimal transport for equal
// sample sizes, quantile-grid resampling to max(|a|,|b|) otherwise.
inline double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein_1d: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n = std::max(a.size(), b.size());
  auto quantile = [](const std::vector<double>& x, double q) {
    std::size_t k = static_cast<std::size_t>(q * static_cast<double>(x.size()));
    if (k >= x.size()) k = x.size() - 1;
    return x[k];
  };
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    sum += std::abs(quantile(a, q) - quantile(b, q));
  }
  return sum / static_cast<double>(n);
}

// Summed per-dimension W1 between class-conditioned clouds, averaged over
// unordered class pairs. Scale-free comparisons only ever use ratios of this.
struct DisparityReport {
  std::vector<double> per_dimension;
  double sum = 0.0;
  std::vector<std::size_t> cluster_counts;  // filled by the cluster sweep, when run
};

inline DisparityReport state_disparity(const Tensor& states, const std::vector<int>& labels,
                                       int n_classes) {
  if (states.rows() != labels.size())
    throw std::invalid_argument("state_disparity: label count mismatch");
  if (n_classes < 2) throw std::invalid_argument("state_disparity: need >= 2 classes");
  DisparityReport rep;
  rep.per_dimension.assign(states.cols(), 0.0);
  for (std::size_t d = 0; d < states.cols(); ++d) {
    std::vector<std::vector<double>> cls(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < states.rows(); ++i)
      cls[static_cast<std::size_t>(labels[i])].push_back(states.at(i, d));
    double acc = 0.0;
    std::size_t pairs = 0;
    for (int i = 0; i < n_classes; ++i)
      for (int j = i + 1; j < n_classes; ++j) {
        acc += wasserstein_1d(cls[static_cast<std::size_t>(i)], cls[static_cast<std::size_t>(j)]);
        ++pairs;
      }
    rep.per_dimension[d] = acc / static_cast<double>(pairs);
    rep.sum += rep.per_dimension[d];
  }
  return rep;
}

// --- density clustering ---

using Point2 = std::array<double, 2>;

// Cluster count only: connected components of the core-point graph (closed
// epsilon ball including self). Border assignment cannot change the count.
inline std::size_t dbscan_count(const std::vector<Point2>& pts, double eps,
                                std::size_t min_samples) {
  const std::size_t n = pts.size();
  if (n == 0) throw std::invalid_argument("dbscan_count: empty point set");
  auto within = [&](std::size_t i, std::size_t j) {
    const double dx = pts[i][0] - pts[j][0];
    const double dy = pts[i][1] - pts[j][1];
    return std::sqrt(dx * dx + dy * dy) <= eps;
  };
  std::vector<std::vector<std::size_t>> nb(n);
  std::vector<bool> core(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      if (within(i, j)) nb[i].push_back(j);
    core[i] = nb[i].size() >= min_samples;
  }
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    for (std::size_t j : nb[i])
      if (core[j]) parent[find(i)] = find(j);
  }
  std::vector<char> seen(n, 0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    const std::size_t r = find(i);
    if (!seen[r]) {
      seen[r] = 1;
      ++count;
    }
  }
  return count;
}

inline std::vector<std::size_t> cluster_sweep(const std::vector<Point2>& pts, double eps,
                                              const std::vector<std::size_t>& min_samples_list) {
  std::vector<std::size_t> out;
  out.reserve(min_samples_list.size());
  for (std::size_t m : min_samples_list) out.push_back(dbscan_count(pts, eps, m));
  return out;
}

// --- 2-D auto-encoder embedding ---

struct EmbedResult {
  Tensor codes;  // [N x 2], tanh-bounded
  std::vector<double> loss_history;
};

inline EmbedResult embed_2d(const std::vector<FeatureVec>& states, std::uint64_t seed,
                            long long steps = 400, std::size_t batch = 64, double lr = 3e-3) {
  if (states.size() < 10) throw std::invalid_argument("embed_2d: need >= 10 states");
  Rng rng(seed, "embed");
  DenseParams enc("embed.enc", 2, kFeatureDim, rng);
  DenseParams dec("embed.dec", kFeatureDim, 2, rng);
  std::vector<Param*> params;
  for (Param* p : enc.all()) params.push_back(p);
  for (Param* p : dec.all()) params.push_back(p);
  AdamConfig adam{lr, 0.9, 0.999, 1e-8};
  EmbedResult out;
  const std::size_t B = std::min(batch, states.size());
  for (long long s = 0; s < steps; ++s) {
    Tensor x({B, kFeatureDim});
    for (std::size_t i = 0; i < B; ++i) {
      const FeatureVec& f = states[rng.index(states.size())];
      for (std::size_t j = 0; j < kFeatureDim; ++j) x.at(i, j) = f[j];
    }
    ad::Tape t;
    ad::Var xin = t.input(x);
    ad::Var code = ad::tanh_(enc.forward(t, xin));
    ad::Var recon = dec.forward(t, code);
    ad::Var loss = ad::mean_all(ad::square(ad::sub(recon, xin)));
    out.loss_history.push_back(loss.value().item());
    t.backward(loss);
    adam_step(params, t, adam);
  }
  Tensor all({states.size(), kFeatureDim});
  for (std::size_t i = 0; i < states.size(); ++i)
    for (std::size_t j = 0; j < kFeatureDim; ++j) all.at(i, j) = states[i][j];
  ad::Tape t;
  out.codes = ad::tanh_(enc.forward(t, t.input(all))).value();
  return out;
}

// Scale each column to max |value| = 1 (no-op on all-zero columns).
inline void unit_scale_columns(Tensor& pts) {
  for (std::size_t c = 0; c < pts.cols(); ++c) {
    double mx = 0.0;
    for (std::size_t r = 0; r < pts.rows(); ++r) mx = std::max(mx, std::abs(pts.at(r, c)));
    if (mx > 0.0)
      for (std::size_t r = 0; r < pts.rows(); ++r) pts.at(r, c) /= mx;
  }
}

// --- model probes ---

// Raw expert hidden state padded or truncated to the balanced width; the
// "skip the balancing map" evaluation route.
inline Tensor pad_cols(const Tensor& x, std::size_t width) {
  Tensor out({x.rows(), width});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < std::min(width, x.cols()); ++c) out.at(r, c) = x.at(r, c);
  return out;
}

// Expert `policy`'s predicted action for every window (any logging policy),
// batched by window length, original row order.
inline Tensor expert_actions(std::vector<PolicyExpert>& experts, int policy,
                             const std::vector<WindowRef>& ws, std::size_t cap) {
  if (policy < 0 || static_cast<std::size_t>(policy) >= experts.size())
    throw std::out_of_range("expert_actions: unknown policy");
  PolicyExpert& ex = experts[static_cast<std::size_t>(policy)];
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  for (std::size_t i = 0; i < ws.size(); ++i) by_len[ws[i].len(cap)].push_back(i);
  Tensor out({ws.size(), kActionDim});
  for (auto& [len, idxs] : by_len) {
    std::vector<WindowRef> sub;
    sub.reserve(idxs.size());
    for (std::size_t i : idxs) sub.push_back(ws[i]);
    ad::Tape t;
    std::vector<ad::Var> xs;
    for (Tensor& x : pack_windows(sub, cap)) xs.push_back(t.input(std::move(x)));
    ad::Var a = ex.action_hat(t, ex.lstm.run(t, xs));
    for (std::size_t k = 0; k < idxs.size(); ++k)
      for (std::size_t j = 0; j < kActionDim; ++j) out.at(idxs[k], j) = a.value().at(k, j);
  }
  return out;
}

// Balanced states for evaluation, or the padded raw-β route when use_br is
// off (the ablation comparison probe).
inline Tensor eval_states(Trainer& tr, const std::vector<WindowRef>& ws, bool use_br) {
  return use_br ? tr.encode_values(ws) : pad_cols(tr.beta_values(ws), tr.config().br_dim);
}

inline Tensor critic_q(Trainer& tr, const Tensor& states, const Tensor& actions) {
  ad::Tape t;
  return tr.critic1().q_only(t, t.input(states), t.input(actions)).value();
}

// Mean Q1 at the actor's own action: the scalar "final quality" readout used
// by ablations and the exploration curve.
inline double eval_mean_q(Trainer& tr, const std::vector<WindowRef>& ws, bool use_br = true) {
  if (ws.empty()) throw std::invalid_argument("eval_mean_q: empty window set");
  Tensor s = eval_states(tr, ws, use_br);
  ad::Tape t;
  ad::Var br = t.input(s);
  ad::Var pi = tr.actor().act(t, br);
  ad::Var q = tr.critic1().q_only(t, br, pi);
  double m = 0.0;
  for (std::size_t i = 0; i < q.value().size(); ++i) m += q.value()[i];
  return m / static_cast<double>(q.value().size());
}

// --- Q-value spread over counterfactual actions ---

struct QSpreadReport {
  std::vector<double> spreads;  // one per state
  double mean = 0.0;
  double p10 = 0.0, p50 = 0.0, p90 = 0.0;
};

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t k = static_cast<std::size_t>(pos);
  if (k + 1 >= sorted.size()) return sorted.back();
  const double f = pos - static_cast<double>(k);
  return sorted[k] * (1.0 - f) + sorted[k + 1] * f;
}

// Per-state spread = max - min of Q1 over {logged action} ∪ {other policies'
// expert actions}.
inline QSpreadReport q_spread(Trainer& tr, const std::vector<WindowRef>& ws, bool use_br) {
  if (ws.empty()) throw std::invalid_argument("q_spread: empty window set");
  const std::size_t B = ws.size();
  const int n = static_cast<int>(tr.experts().size());
  Tensor s = eval_states(tr, ws, use_br);
  Tensor logged({B, kActionDim});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < kActionDim; ++j) logged.at(i, j) = ws[i].last().action[j];
  std::vector<Tensor> qs;  // slot 0: logged; slot 1+c: expert c
  qs.push_back(critic_q(tr, s, logged));
  for (int c = 0; c < n; ++c)
    qs.push_back(critic_q(tr, s, expert_actions(tr.anchor_experts(), c, ws, tr.config().window)));
  QSpreadReport rep;
  rep.spreads.resize(B);
  for (std::size_t i = 0; i < B; ++i) {
    double lo = qs[0][i], hi = qs[0][i];
    for (int c = 0; c < n; ++c) {
      if (c == ws[i].policy_id()) continue;  // counterfactuals only
      const double v = qs[static_cast<std::size_t>(c) + 1][i];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    rep.spreads[i] = hi - lo;
  }
  std::vector<double> sorted = rep.spreads;
  std::sort(sorted.begin(), sorted.end());
  rep.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(B);
  rep.p10 = quantile_sorted(sorted, 0.1);
  rep.p50 = quantile_sorted(sorted, 0.5);
  rep.p90 = quantile_sorted(sorted, 0.9);
  return rep;
}

// --- dropout uncertainty ---

// Std of Q1 over k stochastic expert passes (inverted dropout on the hidden
// state), fixed action.
inline double mc_uncertainty(Trainer& tr, const WindowRef& w, const ActionVec& action, int k,
                             double rate, std::uint64_t seed) {
  if (k < 2) throw std::domain_error("mc_uncertainty: need k >= 2 passes");
  Rng rng(seed, "mc-dropout");
  Tensor a({1, kActionDim});
  for (std::size_t j = 0; j < kActionDim; ++j) a[j] = action[j];
  std::vector<double> q(static_cast<std::size_t>(k));
  PolicyExpert& ex = tr.experts()[static_cast<std::size_t>(w.policy_id())];
  for (int i = 0; i < k; ++i) {
    ad::Tape t;
    ad::Var beta = ex.beta(t, {w}, tr.config().window, rate, &rng);
    ad::Var s = tr.balanced().balance(t, beta);
    q[static_cast<std::size_t>(i)] = tr.critic1().q_only(t, s, t.input(a)).value().item();
  }
  // identical passes (e.g. rate 0) must read exactly zero, not rounding dust
  if (*std::max_element(q.begin(), q.end()) == *std::min_element(q.begin(), q.end())) return 0.0;
  double mean = std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(k);
  double var = 0.0;
  for (double v : q) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(k));
}

// --- objective decomposition report ---

struct ObjectiveReport {
  std::array<double, 4> mean_weights{};  // dwell, engagement, return-time, overflow
  double mean_q = 0.0;
  Tensor weight_rows;  // [N x 4]
};

// Mean decomposition weights over a segment, evaluated at the actor's action.
inline ObjectiveReport objective_report(Trainer& tr, const std::vector<WindowRef>& ws) {
  if (ws.empty()) throw std::invalid_argument("objective_report: empty segment");
  Tensor s = tr.encode_values(ws);
  ad::Tape t;
  ad::Var br = t.input(s);
  ad::Var pi = tr.actor().act(t, br);
  auto o = tr.critic1().forward(t, br, pi);
  ObjectiveReport rep;
  rep.weight_rows = o.w.value();
  for (std::size_t i = 0; i < ws.size(); ++i) {
    rep.mean_q += o.q.value()[i];
    for (std::size_t j = 0; j < 4; ++j) rep.mean_weights[j] += rep.weight_rows.at(i, j);
  }
  rep.mean_q /= static_cast<double>(ws.size());
  for (std::size_t j = 0; j < 4; ++j) rep.mean_weights[j] /= static_cast<double>(ws.size());
  return rep;
}

// Splits windows by a feature threshold at the window's last step.
inline std::pair<std::vector<WindowRef>, std::vector<WindowRef>> split_by_feature(
    const std::vector<WindowRef>& ws, std::size_t feature, double threshold) {
  std::pair<std::vector<WindowRef>, std::vector<WindowRef>> out;  // (below, at-or-above)
  for (const WindowRef& w : ws)
    (w.last().x[feature] < threshold ? out.first : out.second).push_back(w);
  return out;
}

// --- ablations ---

enum class AblationFlag { none, no_br, no_explore, no_decomp };

inline AblationFlag parse_ablation(const std::string& s) {
  if (s == "none") return AblationFlag::none;
  if (s == "no_br") return AblationFlag::no_br;
  if (s == "no_explore") return AblationFlag::no_explore;
  if (s == "no_decomp") return AblationFlag::no_decomp;
  throw std::invalid_argument("unknown ablation flag: " + s);
}

inline const char* ablation_name(AblationFlag f) {
  switch (f) {
    case AblationFlag::none: return "none";
    case AblationFlag::no_br: return "no_br";
    case AblationFlag::no_explore: return "no_explore";
    case AblationFlag::no_decomp: return "no_decomp";
  }
  return "?";
}

// Each flag flips exactly one config field.
inline Config apply_ablation(const Config& cfg, AblationFlag which) {
  Config out = cfg;
  switch (which) {
    case AblationFlag::none: break;
    case AblationFlag::no_br: out.br_enabled = false; break;
    case AblationFlag::no_explore: out.explore_enabled = false; break;
    case AblationFlag::no_decomp: out.critic_mix_alpha = 1.0; break;
  }
  return out;
}

struct AblationResult {
  double q_full = 0.0;
  double q_ablated = 0.0;
  double drop = 0.0;  // (q_full - q_ablated) / q_full
};

// Paired full-vs-ablated training with one seed; the drop in final mean Q.
inline AblationResult ablation_drop(const Config& cfg, AblationFlag which, const Buffer& train,
                                    const std::vector<WindowRef>& eval_ws, std::uint64_t seed) {
  AblationResult res;
  {
    Trainer full(cfg, train, seed);
    full.run();
    res.q_full = eval_mean_q(full, eval_ws);
  }
  {
    Trainer abl(apply_ablation(cfg, which), train, seed);
    abl.run();
    res.q_ablated = eval_mean_q(abl, eval_ws);
  }
  res.drop = (res.q_full - res.q_ablated) / res.q_full;
  return res;
}

// --- exploration speed-up ---

struct ExplorationPoint {
  double fraction = 0.0;
  double q_on = 0.0;   // normalized by the full-data exploration-on run
  double q_off = 0.0;
};

// Paired runs per data fraction: counterfactual exploration on vs off, equal
// seeds and identical data prefixes; all values normalized by the full-data
// exploration-on run.
inline std::vector<ExplorationPoint> exploration_curve(const Config& cfg, const Buffer& train,
                                                       const std::vector<WindowRef>& eval_ws,
                                                       const std::vector<double>& fractions,
                                                       std::uint64_t seed) {
  for (double f : fractions)
    if (f <= 0.0 || f > 1.0) throw std::domain_error("exploration_curve: fraction outside (0,1]");
  Config on = cfg, off = cfg;
  on.explore_enabled = true;
  off.explore_enabled = false;
  auto train_q = [&](const Config& c, const Buffer& data) {
    Trainer tr(c, data, seed);
    tr.run();
    return eval_mean_q(tr, eval_ws);
  };
  std::vector<ExplorationPoint> out;
  double full_on = 0.0;
  bool have_full = false;
  std::vector<std::pair<double, std::pair<double, double>>> raw;
  for (double f : fractions) {
    const Buffer data = f >= 1.0 ? train : fraction_buffer(train, f);
    const double qon = train_q(on, data);
    const double qoff = train_q(off, data);
    raw.push_back({f, {qon, qoff}});
    if (f >= 1.0) {
      full_on = qon;
      have_full = true;
    }
  }
  if (!have_full) full_on = train_q(on, train);
  const double denom = std::abs(full_on) > 1e-9 ? full_on : 1.0;
  for (auto& [f, qs] : raw) out.push_back({f, qs.first / denom, qs.second / denom});
  return out;
}

// --- permutation support ---

inline double support_percent(double observed, const std::vector<double>& null_samples) {
  if (null_samples.empty()) throw std::invalid_argument("support_percent: empty null");
  std::size_t below = 0;
  for (double v : null_samples)
    if (v < observed) ++below;
  return 100.0 * static_cast<double>(below) / static_cast<double>(null_samples.size());
}

// --- held-out evaluation summary ---

struct EvalSummary {
  double mean_q = 0.0;
  std::array<double, 4> mean_decomp{};  // mean of w_i * Q at the actor action
  std::vector<double> preference;       // per policy; sums to 1
};

// Mean Q and decomposition at the actor's action, plus the policy-preference
// readout: the fraction of states where each policy expert's proposed action
// attains the maximum Q (ties broken uniformly with the seeded rng).
inline EvalSummary eval_summary(Trainer& tr, const std::vector<WindowRef>& ws,
                                std::uint64_t seed) {
  if (ws.empty()) throw std::invalid_argument("eval_summary: empty window set");
  const std::size_t B = ws.size();
  const std::size_t n = tr.experts().size();
  EvalSummary res;
  Tensor s = tr.encode_values(ws);
  {
    ad::Tape t;
    ad::Var br = t.input(s);
    ad::Var pi = tr.actor().act(t, br);
    auto o = tr.critic1().forward(t, br, pi);
    for (std::size_t i = 0; i < B; ++i) {
      res.mean_q += o.q.value()[i];
      const auto d = decompose(o.q.value()[i],
                               {o.w.value().at(i, 0), o.w.value().at(i, 1), o.w.value().at(i, 2),
                                o.w.value().at(i, 3)});
      for (std::size_t j = 0; j < 4; ++j) res.mean_decomp[j] += d[j];
    }
    res.mean_q /= static_cast<double>(B);
    for (std::size_t j = 0; j < 4; ++j) res.mean_decomp[j] /= static_cast<double>(B);
  }
  std::vector<Tensor> qs;
  for (std::size_t c = 0; c < n; ++c)
    qs.push_back(critic_q(tr, s, expert_actions(tr.experts(), static_cast<int>(c), ws,
                                                tr.config().window)));
  Rng tie_rng(seed, "eval-ties");
  std::vector<std::size_t> wins(n, 0);
  for (std::size_t i = 0; i < B; ++i) {
    double best = qs[0][i];
    for (std::size_t c = 1; c < n; ++c) best = std::max(best, qs[c][i]);
    std::vector<std::size_t> tied;
    for (std::size_t c = 0; c < n; ++c)
      if (qs[c][i] == best) tied.push_back(c);
    ++wins[tied.size() == 1 ? tied[0] : tied[tie_rng.index(tied.size())]];
  }
  res.preference.resize(n);
  for (std::size_t c = 0; c < n; ++c)
    res.preference[c] = static_cast<double>(wins[c]) / static_cast<double>(B);
  return res;
}

}  // namespace cfq
