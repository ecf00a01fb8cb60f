#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cfq/actor.hpp"
#include "cfq/balanced_repr.hpp"
#include "cfq/checkpoint.hpp"
#include "cfq/config.hpp"
#include "cfq/critic.hpp"
#include "cfq/data.hpp"
#include "cfq/policy_expert.hpp"

namespace cfq {

// Raised when a loss turns non-finite; the offending batch has already been
// dumped to disk by the time this escapes.
struct NanAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// |mean(last window) - mean(previous window)| relative to the previous mean.
inline bool plateau_detector(const std::vector<double>& history, long long window,
                             double threshold) {
  if (window < 2) throw std::domain_error("plateau_detector: window must be >= 2");
  const std::size_t w = static_cast<std::size_t>(window);
  if (history.size() < 2 * w) return false;
  double last = 0.0, prev = 0.0;
  for (std::size_t i = history.size() - w; i < history.size(); ++i) last += history[i];
  for (std::size_t i = history.size() - 2 * w; i < history.size() - w; ++i) prev += history[i];
  last /= static_cast<double>(w);
  prev /= static_cast<double>(w);
  return std::abs(last - prev) / std::max(std::abs(prev), 1e-8) < threshold;
}

// One metrics row per main-loop step.
struct MetricsRow {
  long long step = 0;
  int phase = 0;
  double gamma = 0.0;
  double epsilon = 0.0;
  double critic_loss = 0.0;
  double td_loss = 0.0;
  double decomp_loss = 0.0;
  double classifier_loss = 0.0;
  double classifier_acc = 0.0;
  double actor_loss = 0.0;
  double mean_q = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "step\tphase\tgamma\tepsilon\tcritic_loss\ttd_loss\tdecomp_loss\tclassifier_loss\t"
    "classifier_acc\tactor_loss\tmean_q";

// Enumerates every (episode, t) of a buffer as a window reference.
inline std::vector<WindowRef> all_windows(const Buffer& buffer) {
  std::vector<WindowRef> out;
  for (const Episode& ep : buffer.episodes)
    for (int t = 0; t < static_cast<int>(ep.steps.size()); ++t) out.push_back({&ep, t});
  return out;
}

// Mean pe_loss of one expert over arbitrary windows (grouped by length).
inline double pe_eval_loss(PolicyExpert& expert, const std::vector<WindowRef>& ws,
                           std::size_t cap) {
  if (ws.empty()) throw std::invalid_argument("pe_eval_loss: empty window set");
  std::map<std::size_t, std::vector<WindowRef>> by_len;
  for (const WindowRef& w : ws) by_len[w.len(cap)].push_back(w);
  double total = 0.0;
  std::size_t rows = 0;
  for (auto& [len, group] : by_len) {
    ad::Tape t;
    ad::Var beta = expert.beta(t, group, cap);
    ad::Var ahat = expert.action_hat(t, beta);
    Tensor target({group.size(), kActionDim});
    for (std::size_t i = 0; i < group.size(); ++i)
      for (std::size_t j = 0; j < kActionDim; ++j) target.at(i, j) = group[i].last().action[j];
    total += pe_loss(t, ahat, t.input(target)).value().item() * static_cast<double>(group.size());
    rows += group.size();
  }
  return total / static_cast<double>(rows);
}

// End-to-end training state: the per-policy experts, the shared balancing
// layer, the adversarial classifier, twin critics with targets, and the
// TD3+BC actor, all driven by one seeded deterministic loop.
class Trainer {
 public:
  Trainer(const Config& cfg, Buffer buffer, std::uint64_t seed)
      : cfg_(cfg),
        buffer_(std::move(buffer)),
        seed_(seed),
        rng_sample_(seed, "train-sample"),
        rng_noise_(seed, "train-noise"),
        rng_anchor_(seed, "train-anchor"),
        rng_pretrain_(seed, "train-pretrain"),
        sampler_(buffer_.n_policies, cfg.sampler_delta),
        adam_{cfg.lr, 0.9, 0.999, 1e-8} {
    cfg_.validate();
    phases_ = cfg_.phases();
    if (buffer_.n_policies < 2) throw std::runtime_error("trainer: need at least two policies");
    Rng init(seed, "train-init");
    for (int p = 0; p < buffer_.n_policies; ++p) experts_.emplace_back(p, cfg_.hidden, init);
    Rng anchor_init(seed, "train-anchor-init");
    for (int p = 0; p < buffer_.n_policies; ++p)
      anchor_experts_.emplace_back(p, cfg_.hidden, anchor_init, "ape");
    br_ = BalancedRepr(cfg_.hidden, cfg_.br_dim, init);
    classifier_ = PolicyClassifier(cfg_.br_dim, cfg_.cls_hidden, buffer_.n_policies, init);
    q1_ = CriticNet("q1", cfg_.br_dim, cfg_.critic_hidden, init);
    q2_ = CriticNet("q2", cfg_.br_dim, cfg_.critic_hidden, init);
    tq1_ = CriticNet("tq1", cfg_.br_dim, cfg_.critic_hidden, init);
    tq2_ = CriticNet("tq2", cfg_.br_dim, cfg_.critic_hidden, init);
    actor_ = ActorNet("actor", cfg_.br_dim, cfg_.critic_hidden, init);
    tactor_ = ActorNet("tactor", cfg_.br_dim, cfg_.critic_hidden, init);
    tq1_.copy_from(q1_);
    tq2_.copy_from(q2_);
    tactor_.copy_from(actor_);

    build_pools();
    build_param_lists();
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  // --- pipeline stages ---

  // Behavior-clones each expert on its own policy's data.
  void pretrain_experts() {
    if (stage_ >= 1) return;
    for (int p = 0; p < buffer_.n_policies; ++p)
      if (pools_[static_cast<std::size_t>(p)].empty())
        throw std::runtime_error("trainer: missing policy partition " + std::to_string(p));
    for (int p = 0; p < buffer_.n_policies; ++p) {
      // group this policy's windows by length; batches are drawn per group
      std::map<std::size_t, std::vector<WindowRef>> by_len;
      for (const WindowRef& w : pools_[static_cast<std::size_t>(p)])
        by_len[w.len(cfg_.window)].push_back(w);
      std::vector<const std::vector<WindowRef>*> groups;
      std::vector<double> cum;
      double total = 0.0;
      for (auto& [len, g] : by_len) {
        groups.push_back(&g);
        total += static_cast<double>(g.size());
        cum.push_back(total);
      }
      PolicyExpert& ex = experts_[static_cast<std::size_t>(p)];
      // pre-training trains the whole expert; the head freezes afterwards
      std::vector<Param*> params = ex.all();
      for (long long step = 0; step < cfg_.pe_pretrain_steps; ++step) {
        const double u = rng_pretrain_.uniform() * total;
        std::size_t gi = 0;
        while (gi + 1 < cum.size() && u >= cum[gi]) ++gi;
        const auto& pool = *groups[gi];
        std::vector<WindowRef> batch;
        batch.reserve(cfg_.pe_batch);
        for (std::size_t i = 0; i < cfg_.pe_batch; ++i)
          batch.push_back(pool[rng_pretrain_.index(pool.size())]);
        ad::Tape t;
        ad::Var beta = ex.beta(t, batch, cfg_.window);
        ad::Var ahat = ex.action_hat(t, beta);
        Tensor target({batch.size(), kActionDim});
        for (std::size_t i = 0; i < batch.size(); ++i)
          for (std::size_t j = 0; j < kActionDim; ++j)
            target.at(i, j) = batch[i].last().action[j];
        ad::Var loss = pe_loss(t, ahat, t.input(target));
        check_finite(loss.value().item(), "pe_loss", batch);
        t.backward(loss);
        adam_step(params, t, adam_);
      }
    }
    // Freeze a pristine copy of each expert. Exploration anchors and
    // counterfactual actions must keep imitating their logging policy even
    // after critic/adversarial gradients move the live LSTMs, so every
    // action-generation role reads from this snapshot.
    for (std::size_t p = 0; p < experts_.size(); ++p) {
      auto src = experts_[p].all();
      auto dst = anchor_experts_[p].all();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
    }
    stage_ = 1;
  }

  // Adversarial warm-up before the first critic update.
  void warmup() {
    pretrain_experts();
    if (stage_ >= 2) return;
    if (cfg_.br_enabled) {
      for (long long i = 0; i < cfg_.warmup_adversarial; ++i) {
        std::vector<WindowRef> ws = sample_main_batch();
        adversarial_round(ws);
      }
    }
    stage_ = 2;
  }

  // Runs the main loop; with stop_after >= 0 executes at most that many
  // main-loop steps (pre-training and warm-up always complete first).
  long long run(long long stop_after = -1) {
    warmup();
    long long done = 0;
    while (!finished() && (stop_after < 0 || done < stop_after)) {
      main_step();
      ++done;
    }
    return done;
  }

  bool finished() const {
    return stage_ >= 2 && phase_idx_ >= static_cast<long long>(phases_.size());
  }

  // --- state access ---

  const Config& config() const { return cfg_; }
  const Buffer& buffer() const { return buffer_; }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  std::vector<PolicyExpert>& experts() { return experts_; }
  std::vector<PolicyExpert>& anchor_experts() { return anchor_experts_; }
  BalancedRepr& balanced() { return br_; }
  PolicyClassifier& classifier() { return classifier_; }
  CriticNet& critic1() { return q1_; }
  CriticNet& critic2() { return q2_; }
  CriticNet& target_critic1() { return tq1_; }
  CriticNet& target_critic2() { return tq2_; }
  ActorNet& actor() { return actor_; }
  ActorNet& target_actor() { return tactor_; }
  long long global_step() const { return global_step_; }
  long long actor_updates() const { return actor_updates_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::vector<WindowRef>>& pools() const { return pools_; }
  void set_dump_path(std::string p) { dump_path_ = std::move(p); }

  // No-grad balanced states for arbitrary windows, original row order.
  Tensor encode_values(const std::vector<WindowRef>& ws) {
    ad::Tape t;
    return br_.balance(t, encode_beta(t, ws)).value();
  }

  // No-grad raw expert hidden states, original row order.
  Tensor beta_values(const std::vector<WindowRef>& ws) {
    ad::Tape t;
    return encode_beta(t, ws).value();
  }

  // Hidden states from the frozen pretrained experts: the unbalanced
  // reference representation that disparity measures compare against.
  Tensor beta_values_raw(const std::vector<WindowRef>& ws) {
    ad::Tape t;
    return encode_beta(t, ws, anchor_experts_).value();
  }

  // Classifier accuracy on arbitrary windows (fresh forward pass).
  double classifier_accuracy(const std::vector<WindowRef>& ws) {
    if (ws.empty()) throw std::invalid_argument("classifier_accuracy: empty window set");
    Tensor br = encode_values(ws);
    ad::Tape t;
    ad::Var probs = classifier_.probs(t, t.input(br));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ws.size(); ++i)
      if (argmax_row(probs.value(), i) == ws[i].policy_id()) ++hits;
    return static_cast<double>(hits) / static_cast<double>(ws.size());
  }

  // --- metrics / checkpoint plumbing ---

  void write_metrics(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("trainer: cannot open " + path + " for metrics");
    out << kMetricsHeader << '\n';
    char num[32];
    auto put = [&](double v) {
      std::snprintf(num, sizeof(num), "%.17g", v);
      out << '\t' << num;
    };
    for (const MetricsRow& r : metrics_) {
      out << r.step << '\t' << r.phase;
      std::snprintf(num, sizeof(num), "%.17g", r.gamma);
      out << '\t' << num;
      put(r.epsilon);
      put(r.critic_loss);
      put(r.td_loss);
      put(r.decomp_loss);
      put(r.classifier_loss);
      put(r.classifier_acc);
      put(r.actor_loss);
      put(r.mean_q);
      out << '\n';
    }
    if (!out) throw std::runtime_error("trainer: metrics write failed on " + path);
  }

  Checkpoint checkpoint() {
    Checkpoint ck;
    ck.config_text = config_text(cfg_);
    for (Param* p : all_params_) {
      ck.put_tensor("param/" + p->name, p->value);
      ck.put_tensor("adam_m/" + p->name, p->adam.m);
      ck.put_tensor("adam_v/" + p->name, p->adam.v);
      ck.put_i64("adam_t/" + p->name, p->adam.step);
    }
    ck.put_string("rng/sample", rng_sample_.save());
    ck.put_string("rng/noise", rng_noise_.save());
    ck.put_string("rng/anchor", rng_anchor_.save());
    ck.put_string("rng/pretrain", rng_pretrain_.save());
    ck.put_f64vec("sampler/p_prev", sampler_.p_prev);
    ck.put_i64("progress/stage", stage_);
    ck.put_i64("progress/global_step", global_step_);
    ck.put_i64("progress/actor_updates", actor_updates_);
    ck.put_i64("progress/phase", phase_idx_);
    ck.put_i64("progress/steps_in_phase", steps_in_phase_);
    ck.put_f64("state/last_actor_loss", last_actor_loss_);
    ck.put_f64vec("state/phase_history", history_);
    ck.put_i64("meta/seed", static_cast<long long>(seed_));
    ck.put_i64("data/episodes", static_cast<long long>(buffer_.episodes.size()));
    ck.put_i64("data/transitions", static_cast<long long>(buffer_.transition_count()));
    ck.put_i64("data/n_policies", buffer_.n_policies);
    std::vector<double> rows;
    rows.reserve(metrics_.size() * 11);
    for (const MetricsRow& r : metrics_) {
      rows.push_back(static_cast<double>(r.step));
      rows.push_back(static_cast<double>(r.phase));
      rows.push_back(r.gamma);
      rows.push_back(r.epsilon);
      rows.push_back(r.critic_loss);
      rows.push_back(r.td_loss);
      rows.push_back(r.decomp_loss);
      rows.push_back(r.classifier_loss);
      rows.push_back(r.classifier_acc);
      rows.push_back(r.actor_loss);
      rows.push_back(r.mean_q);
    }
    ck.put_f64vec("metrics/rows", std::move(rows));
    return ck;
  }

  // Restores every parameter, optimizer moment, rng stream, and counter.
  // The config must already match (the checkpoint embeds its own).
  // require_same_buffer=false permits evaluation against a held-out buffer;
  // resuming training demands the exact buffer the checkpoint was built from.
  void load_state(const Checkpoint& ck, bool require_same_buffer = true) {
    if (fnv1a64(ck.config_text) != config_hash(cfg_))
      throw std::runtime_error("trainer: checkpoint config hash mismatch");
    if (ck.i64("data/n_policies") != buffer_.n_policies)
      throw std::runtime_error("trainer: checkpoint policy count differs from buffer");
    if (require_same_buffer &&
        (ck.i64("data/episodes") != static_cast<long long>(buffer_.episodes.size()) ||
         ck.i64("data/transitions") != static_cast<long long>(buffer_.transition_count())))
      throw std::runtime_error("trainer: checkpoint was produced from a different buffer");
    for (Param* p : all_params_) {
      const Tensor& v = ck.tensor("param/" + p->name);
      check_same_shape(p->value, v, "load_state");
      p->value = v;
      p->adam.m = ck.tensor("adam_m/" + p->name);
      p->adam.v = ck.tensor("adam_v/" + p->name);
      p->adam.step = ck.i64("adam_t/" + p->name);
    }
    rng_sample_.load(ck.string("rng/sample"));
    rng_noise_.load(ck.string("rng/noise"));
    rng_anchor_.load(ck.string("rng/anchor"));
    rng_pretrain_.load(ck.string("rng/pretrain"));
    sampler_.p_prev = ck.f64vec("sampler/p_prev");
    stage_ = ck.i64("progress/stage");
    global_step_ = ck.i64("progress/global_step");
    actor_updates_ = ck.i64("progress/actor_updates");
    phase_idx_ = ck.i64("progress/phase");
    steps_in_phase_ = ck.i64("progress/steps_in_phase");
    last_actor_loss_ = ck.f64("state/last_actor_loss");
    history_ = ck.f64vec("state/phase_history");
    seed_ = static_cast<std::uint64_t>(ck.i64("meta/seed"));
    const std::vector<double>& rows = ck.f64vec("metrics/rows");
    if (rows.size() % 11 != 0) throw std::runtime_error("trainer: corrupt metrics in checkpoint");
    metrics_.clear();
    for (std::size_t i = 0; i < rows.size(); i += 11) {
      MetricsRow r;
      r.step = static_cast<long long>(rows[i]);
      r.phase = static_cast<int>(rows[i + 1]);
      r.gamma = rows[i + 2];
      r.epsilon = rows[i + 3];
      r.critic_loss = rows[i + 4];
      r.td_loss = rows[i + 5];
      r.decomp_loss = rows[i + 6];
      r.classifier_loss = rows[i + 7];
      r.classifier_acc = rows[i + 8];
      r.actor_loss = rows[i + 9];
      r.mean_q = rows[i + 10];
      metrics_.push_back(r);
    }
  }

  // Balanced states with gradients, grouping windows by (policy, length) and
  // restoring the original row order.
  ad::Var encode(ad::Tape& t, const std::vector<WindowRef>& ws) {
    return br_.balance(t, encode_beta(t, ws));
  }

 private:
  void build_pools() {
    windows_ = all_windows(buffer_);
    pools_.assign(static_cast<std::size_t>(buffer_.n_policies), {});
    for (const WindowRef& w : windows_) {
      const int p = w.policy_id();
      if (p < 0 || p >= buffer_.n_policies)
        throw std::runtime_error("trainer: policy id outside [0, n)");
      pools_[static_cast<std::size_t>(p)].push_back(w);
    }
  }

  void build_param_lists() {
    auto push_all = [&](std::vector<Param*> ps) {
      for (Param* p : ps) all_params_.push_back(p);
    };
    for (PolicyExpert& ex : experts_) push_all(ex.all());
    // snapshot params never receive gradients but checkpoint with the rest
    for (PolicyExpert& ex : anchor_experts_) push_all(ex.all());
    push_all(br_.all());
    push_all(classifier_.all());
    push_all(q1_.all());
    push_all(q2_.all());
    push_all(tq1_.all());
    push_all(tq2_.all());
    push_all(actor_.all());
    push_all(tactor_.all());
    std::set<std::string> names;
    for (Param* p : all_params_)
      if (!names.insert(p->name).second)
        throw std::logic_error("trainer: duplicate parameter name " + p->name);

    auto push_expert_trainables = [&](std::vector<Param*>& dst) {
      for (PolicyExpert& ex : experts_) {
        for (Param* p : ex.lstm_params()) dst.push_back(p);
        if (cfg_.pe_head_trainable)
          for (Param* p : ex.head.all()) dst.push_back(p);
      }
    };
    for (Param* p : q1_.all()) critic_params_.push_back(p);
    for (Param* p : q2_.all()) critic_params_.push_back(p);
    for (Param* p : br_.all()) critic_params_.push_back(p);
    push_expert_trainables(critic_params_);

    for (Param* p : classifier_.all()) adv_params_.push_back(p);
    for (Param* p : br_.all()) adv_params_.push_back(p);
    push_expert_trainables(adv_params_);

    for (Param* p : classifier_.all()) cls_params_.push_back(p);

    for (Param* p : actor_.all()) actor_params_.push_back(p);
  }

  static int argmax_row(const Tensor& probs, std::size_t row) {
    int best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c)
      if (probs.at(row, c) > probs.at(row, static_cast<std::size_t>(best)))
        best = static_cast<int>(c);
    return best;
  }

  std::vector<WindowRef> sample_main_batch() {
    return sample_batch(pools_, sampler_, cfg_.batch_size, rng_sample_);
  }

  ad::Var encode_beta(ad::Tape& t, const std::vector<WindowRef>& ws) {
    return encode_beta(t, ws, experts_);
  }

  ad::Var encode_beta(ad::Tape& t, const std::vector<WindowRef>& ws,
                      std::vector<PolicyExpert>& experts) {
    if (ws.empty()) throw std::invalid_argument("trainer: empty encode batch");
    std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < ws.size(); ++i)
      groups[{ws[i].policy_id(), ws[i].len(cfg_.window)}].push_back(i);
    std::vector<ad::Var> blocks;
    std::vector<std::size_t> order;
    for (auto& [key, idxs] : groups) {
      std::vector<WindowRef> sub;
      sub.reserve(idxs.size());
      for (std::size_t i : idxs) sub.push_back(ws[i]);
      blocks.push_back(experts[static_cast<std::size_t>(key.first)].beta(t, sub, cfg_.window));
      for (std::size_t i : idxs) order.push_back(i);
    }
    ad::Var all = blocks.size() == 1 ? blocks[0] : ad::concat_rows(blocks);
    bool identity = true;
    for (std::size_t j = 0; j < order.size(); ++j)
      if (order[j] != j) identity = false;
    if (identity) return all;
    // order[j] = original index of concatenated row j; invert it
    std::vector<std::size_t> inv(order.size());
    for (std::size_t j = 0; j < order.size(); ++j) inv[order[j]] = j;
    return ad::gather_rows(all, inv);
  }

  struct BatchData {
    Tensor actions;       // [B x 3] logged
    Tensor rewards;       // [B x 3] components
    Tensor r_scalar;      // [B x 1]
    std::vector<char> done;
    std::vector<int> labels;
    std::vector<WindowRef> next_ws;  // same window on terminal rows (unused there)
  };

  BatchData make_batch(const std::vector<WindowRef>& ws) const {
    const std::size_t B = ws.size();
    BatchData b{Tensor({B, kActionDim}), Tensor({B, kRewardDim}), Tensor({B, 1}), {}, {}, {}};
    b.done.resize(B);
    b.labels.resize(B);
    b.next_ws.reserve(B);
    for (std::size_t i = 0; i < B; ++i) {
      const Transition& tr = ws[i].last();
      for (std::size_t j = 0; j < kActionDim; ++j) b.actions.at(i, j) = tr.action[j];
      for (std::size_t j = 0; j < kRewardDim; ++j) b.rewards.at(i, j) = tr.reward[j];
      b.r_scalar[i] = scalarize_reward(tr.reward);
      b.done[i] = tr.done ? 1 : 0;
      b.labels[i] = ws[i].policy_id();
      b.next_ws.push_back(tr.done ? ws[i] : WindowRef{ws[i].ep, ws[i].t + 1});
    }
    return b;
  }

  void check_finite(double v, const char* what, const std::vector<WindowRef>& ws) {
    if (std::isfinite(v)) return;
    std::ofstream out(dump_path_);
    if (out) {
      out << "# non-finite " << what << " at step " << global_step_ << '\n';
      out << "episode_id\tt\tpolicy_id\n";
      for (const WindowRef& w : ws)
        out << w.ep->id << '\t' << w.t << '\t' << w.policy_id() << '\n';
    }
    throw NanAbort(std::string("non-finite ") + what + " at step " +
                   std::to_string(global_step_) + "; batch dumped to " + dump_path_);
  }

  // Discriminator-only update: trains the policy classifier on the current
  // (frozen) balanced states. Keeping the classifier near-optimal between
  // encoder moves is what makes the reversed gradient point along a genuine
  // distribution divergence instead of a stale decision boundary.
  void classifier_step(const std::vector<WindowRef>& ws) {
    std::vector<int> labels;
    labels.reserve(ws.size());
    for (const WindowRef& w : ws) labels.push_back(w.policy_id());
    Tensor br_vals = encode_values(ws);
    ad::Tape t;
    ad::Var probs = classifier_.probs(t, t.input(br_vals));
    ad::Var loss = ad::cross_entropy(probs, labels);
    check_finite(loss.value().item(), "classifier_loss", ws);
    t.backward(loss);
    adam_step(cls_params_, t, adam_);
  }

  // One full round of the balancing game: several discriminator-only updates
  // on fresh batches, then a single combined update whose reversed gradient
  // moves the encoder. Returns the combined step's loss and accuracy.
  std::pair<double, double> adversarial_round(const std::vector<WindowRef>& ws) {
    for (long long k = 1; k < cfg_.adversarial_steps; ++k)
      classifier_step(sample_main_batch());
    return adversarial_step(ws);
  }

  // Classifier + (reversed) encoder update on one batch; refreshes the
  // inverse-class sampler from post-update predictions.
  std::pair<double, double> adversarial_step(const std::vector<WindowRef>& ws) {
    std::vector<int> labels;
    labels.reserve(ws.size());
    for (const WindowRef& w : ws) labels.push_back(w.policy_id());
    ad::Tape t;
    ad::Var br = encode(t, ws);
    ad::Var rev = ad::grl(br, cfg_.lambda_grl);
    ad::Var probs = classifier_.probs(t, rev);
    ad::Var loss = ad::cross_entropy(probs, labels);
    const double loss_val = loss.value().item();
    check_finite(loss_val, "classifier_loss", ws);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ws.size(); ++i)
      if (argmax_row(probs.value(), i) == labels[i]) ++hits;
    const double acc = static_cast<double>(hits) / static_cast<double>(ws.size());
    t.backward(loss);
    adam_step(adv_params_, t, adam_);
    // sampler follows the classifier's post-update predicted distribution
    Tensor br_now = encode_values(ws);
    ad::Tape t2;
    ad::Var probs_now = classifier_.probs(t2, t2.input(br_now));
    std::vector<std::size_t> counts(static_cast<std::size_t>(buffer_.n_policies), 0);
    for (std::size_t i = 0; i < ws.size(); ++i)
      ++counts[static_cast<std::size_t>(argmax_row(probs_now.value(), i))];
    sampler_.update(counts);
    return {loss_val, acc};
  }

  void main_step() {
    const Config::Phase& phase = phases_[static_cast<std::size_t>(phase_idx_)];
    const double eps =
        cfg_.explore_enabled
            ? epsilon_schedule(cfg_.eps_start, cfg_.eps_end, steps_in_phase_, phase.max_steps)
            : 0.0;

    std::vector<WindowRef> ws = sample_main_batch();
    BatchData batch = make_batch(ws);

    // targets: next balanced state through the online encoder, target actor
    // action with clipped smoothing noise, min of target critics
    Tensor next_br = encode_values(batch.next_ws);
    Tensor next_pi;
    {
      ad::Tape t;
      next_pi = tactor_.act(t, t.input(next_br)).value();
    }
    Tensor smoothed = smooth_target_actions(next_pi, {cfg_.policy_noise, cfg_.noise_clip},
                                            rng_noise_);
    Tensor y = td_targets(tq1_, tq2_, next_br, smoothed, batch.r_scalar, batch.done, phase.gamma);

    // critic update (both critics, balancing layer, expert recurrences)
    double critic_val, td_val, dec_val, mean_q;
    {
      ad::Tape t;
      ad::Var br = encode(t, ws);
      auto o1 = q1_.forward(t, br, t.input(batch.actions));
      ad::Var q2 = q2_.q_only(t, br, t.input(batch.actions));
      ad::Var td = td_loss(t, o1.q, q2, y);
      ad::Var dec = decomp_loss(t, o1.q, o1.w, batch.rewards);
      ad::Var loss = critic_loss(td, dec, cfg_.critic_mix_alpha);
      critic_val = loss.value().item();
      td_val = td.value().item();
      dec_val = dec.value().item();
      mean_q = 0.0;
      for (std::size_t i = 0; i < o1.q.value().size(); ++i) mean_q += o1.q.value()[i];
      mean_q /= static_cast<double>(o1.q.value().size());
      check_finite(critic_val, "critic_loss", ws);
      t.backward(loss);
      adam_step(critic_params_, t, adam_);
    }

    double cls_val = 0.0, cls_acc = 0.0;
    if (cfg_.br_enabled) std::tie(cls_val, cls_acc) = adversarial_round(ws);

    ++global_step_;
    ++steps_in_phase_;

    // delayed actor update + target tracking
    if (global_step_ % cfg_.policy_freq == 0) {
      Tensor br_vals = encode_values(ws);
      Tensor anchors({ws.size(), kActionDim});
      for (std::size_t i = 0; i < ws.size(); ++i) {
        const ActionVec a = select_anchor(ws[i], anchor_experts_, eps, cfg_.window, rng_anchor_);
        for (std::size_t j = 0; j < kActionDim; ++j) anchors.at(i, j) = a[j];
      }
      ad::Tape t;
      ActorLossParts parts = actor_loss(t, actor_, q1_, t.input(br_vals), anchors, cfg_.bc_alpha);
      last_actor_loss_ = parts.loss.value().item();
      check_finite(last_actor_loss_, "actor_loss", ws);
      t.backward(parts.loss);
      adam_step(actor_params_, t, adam_);
      ++actor_updates_;
      tq1_.polyak_from(q1_, cfg_.tau);
      tq2_.polyak_from(q2_, cfg_.tau);
      tactor_.polyak_from(actor_, cfg_.tau);
    }

    MetricsRow row;
    row.step = global_step_;
    row.phase = static_cast<int>(phase_idx_);
    row.gamma = phase.gamma;
    row.epsilon = eps;
    row.critic_loss = critic_val;
    row.td_loss = td_val;
    row.decomp_loss = dec_val;
    row.classifier_loss = cls_val;
    row.classifier_acc = cls_acc;
    row.actor_loss = last_actor_loss_;
    row.mean_q = mean_q;
    metrics_.push_back(row);

    history_.push_back(critic_val);
    if (steps_in_phase_ >= phase.max_steps ||
        plateau_detector(history_, phase.window, phase.threshold)) {
      ++phase_idx_;
      steps_in_phase_ = 0;
      history_.clear();
    }
  }

  Config cfg_;
  Buffer buffer_;
  std::uint64_t seed_;
  std::vector<Config::Phase> phases_;

  Rng rng_sample_, rng_noise_, rng_anchor_, rng_pretrain_;
  ClassSampler sampler_;
  AdamConfig adam_;

  std::vector<PolicyExpert> experts_;
  std::vector<PolicyExpert> anchor_experts_;
  BalancedRepr br_;
  PolicyClassifier classifier_;
  CriticNet q1_, q2_, tq1_, tq2_;
  ActorNet actor_, tactor_;

  std::vector<WindowRef> windows_;
  std::vector<std::vector<WindowRef>> pools_;
  std::vector<Param*> all_params_, critic_params_, adv_params_, cls_params_, actor_params_;

  long long stage_ = 0;  // 0 fresh, 1 experts pre-trained, 2 warm-up done
  long long global_step_ = 0;
  long long actor_updates_ = 0;
  long long phase_idx_ = 0;
  long long steps_in_phase_ = 0;
  double last_actor_loss_ = 0.0;
  std::vector<double> history_;
  std::vector<MetricsRow> metrics_;
  std::string dump_path_ = "nan_batch_dump.tsv";
};

}  // namespace cfq
