#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cfq/autodiff.hpp"
#include "cfq/data.hpp"
#include "cfq/layers.hpp"
#include "cfq/optim.hpp"

namespace cfq {

inline constexpr std::size_t kPeInputDim = kFeatureDim + kActionDim + kRewardDim;  // 18

// A view into one state history: the window of steps ending at index t of an
// episode, at most `cap` steps long.
struct WindowRef {
  const Episode* ep = nullptr;
  int t = 0;

  int policy_id() const { return ep->steps.front().policy_id; }
  std::size_t len(std::size_t cap) const {
    return std::min<std::size_t>(static_cast<std::size_t>(t) + 1, cap);
  }
  const Transition& last() const { return ep->steps[static_cast<std::size_t>(t)]; }
};

// Packs equal-length windows into per-step [B x 18] input tensors:
// current features, previous action, previous reward.
inline std::vector<Tensor> pack_windows(const std::vector<WindowRef>& ws, std::size_t cap) {
  if (ws.empty()) throw std::invalid_argument("pack_windows: empty batch");
  const std::size_t len = ws[0].len(cap);
  const std::size_t B = ws.size();
  std::vector<Tensor> xs(len, Tensor({B, kPeInputDim}));
  for (std::size_t b = 0; b < B; ++b) {
    if (ws[b].len(cap) != len) throw std::invalid_argument("pack_windows: mixed window lengths");
    const std::size_t start = static_cast<std::size_t>(ws[b].t) + 1 - len;
    for (std::size_t k = 0; k < len; ++k) {
      const Transition& tr = ws[b].ep->steps[start + k];
      double* row = xs[k].data() + b * kPeInputDim;
      for (std::size_t i = 0; i < kFeatureDim; ++i) row[i] = tr.x[i];
      for (std::size_t i = 0; i < kActionDim; ++i) row[kFeatureDim + i] = tr.prev_action[i];
      for (std::size_t i = 0; i < kRewardDim; ++i)
        row[kFeatureDim + kActionDim + i] = tr.prev_reward[i];
    }
  }
  return xs;
}

// Per-logging-policy recurrent encoder plus an action head that clones the
// policy's behavior. The final hidden state is the history representation
// consumed by the shared balancing layer.
struct PolicyExpert {
  int policy_id = -1;
  LstmParams lstm;
  DenseParams head;  // hidden -> 3, sigmoid output

  PolicyExpert() = default;
  PolicyExpert(int pid, std::size_t hidden, Rng& rng, const std::string& prefix = "pe")
      : policy_id(pid),
        lstm(prefix + std::to_string(pid) + ".lstm", kPeInputDim, hidden, rng),
        head(prefix + std::to_string(pid) + ".head", kActionDim, hidden, rng) {}

  // beta over a batch of equal-length windows. `train_dropout` > 0 activates
  // inverted dropout on the hidden state (used by the uncertainty probe).
  ad::Var beta(ad::Tape& t, const std::vector<WindowRef>& ws, std::size_t cap,
               double dropout_rate = 0.0, Rng* dropout_rng = nullptr) {
    for (const WindowRef& w : ws)
      if (w.policy_id() != policy_id)
        throw std::invalid_argument("policy expert: window from another policy");
    std::vector<ad::Var> xs;
    for (Tensor& x : pack_windows(ws, cap)) xs.push_back(t.input(std::move(x)));
    ad::Var h = lstm.run(t, xs);
    if (dropout_rate > 0.0) {
      if (!dropout_rng) throw std::invalid_argument("policy expert: dropout needs an rng");
      h = ad::dropout(h, dropout_rate, *dropout_rng);
    }
    return h;
  }

  ad::Var action_hat(ad::Tape& t, ad::Var beta_var) {
    return ad::sigmoid(head.forward(t, beta_var));
  }

  std::vector<Param*> lstm_params() { return lstm.all(); }
  std::vector<Param*> all() {
    auto v = lstm.all();
    for (Param* p : head.all()) v.push_back(p);
    return v;
  }
};

// Weighted MSE against the logged action, normalized by the weight sum.
inline ad::Var pe_loss(ad::Tape& t, ad::Var action_hat, ad::Var action,
                       const ActionVec& dim_weights = {1.0, 1.0, 1.0}) {
  double wsum = 0.0;
  for (double w : dim_weights) {
    if (w < 0.0) throw std::domain_error("pe_loss: negative weight");
    wsum += w;
  }
  if (wsum <= 0.0) throw std::domain_error("pe_loss: weights sum to zero");
  const std::size_t rows = action_hat.value().rows();
  using namespace ad;
  Var sq = square(sub(action_hat, action));
  Var weighted = scale_cols(sq, {dim_weights[0], dim_weights[1], dim_weights[2]});
  return scale(sum(weighted), 1.0 / (wsum * static_cast<double>(rows)));
}

// Runs policy cp's expert on a history logged by a different policy and
// returns its predicted action.
inline ActionVec counterfactual_action(std::vector<PolicyExpert>& experts, int cp,
                                       const WindowRef& w, std::size_t cap) {
  if (cp < 0 || static_cast<std::size_t>(cp) >= experts.size())
    throw std::out_of_range("counterfactual_action: unknown policy");
  if (cp == w.policy_id())
    throw std::invalid_argument("counterfactual_action: cp must differ from the logging policy");
  PolicyExpert& ex = experts[static_cast<std::size_t>(cp)];
  ad::Tape t;
  std::vector<ad::Var> xs;
  for (Tensor& x : pack_windows({w}, cap)) xs.push_back(t.input(std::move(x)));
  ad::Var h = ex.lstm.run(t, xs);
  ad::Var a = ex.action_hat(t, h);
  ActionVec out{};
  for (std::size_t i = 0; i < kActionDim; ++i) out[i] = a.value()[i];
  return out;
}

}  // namespace cfq
