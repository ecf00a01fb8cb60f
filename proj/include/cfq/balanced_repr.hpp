#pragma once

#include <stdexcept>
#include <vector>

#include "cfq/autodiff.hpp"
#include "cfq/data.hpp"
#include "cfq/layers.hpp"
#include "cfq/rng.hpp"

namespace cfq {

// The shared map from any expert's hidden state to the policy-invariant
// representation. One parameter set regardless of which expert produced the
// input.
struct BalancedRepr {
  DenseParams theta;

  BalancedRepr() = default;
  BalancedRepr(std::size_t hidden, std::size_t d, Rng& rng) : theta("theta", d, hidden, rng) {}

  ad::Var balance(ad::Tape& t, ad::Var beta) { return ad::tanh_(theta.forward(t, beta)); }

  std::vector<Param*> all() { return theta.all(); }
};

// Adversary that tries to recover the logging policy from the balanced state.
struct PolicyClassifier {
  DenseParams l1, l2;
  int n_policies = 0;

  PolicyClassifier() = default;
  PolicyClassifier(std::size_t d, std::size_t hidden, int n, Rng& rng)
      : l1("cls.l1", hidden, d, rng), l2("cls.l2", static_cast<std::size_t>(n), hidden, rng),
        n_policies(n) {}

  // Class probabilities [B x n].
  ad::Var probs(ad::Tape& t, ad::Var br) {
    return ad::softmax(l2.forward(t, ad::relu(l1.forward(t, br))));
  }

  std::vector<Param*> all() {
    auto v = l1.all();
    for (Param* p : l2.all()) v.push_back(p);
    return v;
  }
};

// Mean cross-entropy of the classifier against policy labels. The caller
// chooses whether `br` arrived through the gradient reversal layer.
inline ad::Var classifier_loss(ad::Tape& t, PolicyClassifier& cls, ad::Var br,
                               std::span<const int> policy_ids) {
  for (int p : policy_ids)
    if (p < 0 || p >= cls.n_policies) throw std::out_of_range("classifier_loss: unknown policy id");
  return ad::cross_entropy(cls.probs(t, br), policy_ids);
}

// Inverse-class-frequency sampler state. p_prev estimates the classifier's
// predicted class distribution from the previous step; sampling weights are
// proportional to 1/(p_prev + delta).
struct ClassSampler {
  std::vector<double> p_prev;
  double delta = 0.01;

  explicit ClassSampler(int n = 0, double d = 0.01)
      : p_prev(static_cast<std::size_t>(n), n > 0 ? 1.0 / n : 0.0), delta(d) {}

  std::vector<double> weights() const {
    std::vector<double> w(p_prev.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = 1.0 / (p_prev[i] + delta);
      sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
  }

  // Refresh from predicted class counts on the latest batch.
  void update(const std::vector<std::size_t>& predicted_counts) {
    if (predicted_counts.size() != p_prev.size())
      throw std::invalid_argument("class sampler: count size mismatch");
    std::size_t total = 0;
    for (std::size_t c : predicted_counts) total += c;
    if (total == 0) return;
    for (std::size_t i = 0; i < p_prev.size(); ++i)
      p_prev[i] = static_cast<double>(predicted_counts[i]) / static_cast<double>(total);
  }
};

// Draws transitions class-by-class with the sampler's weights. Classes with
// no data force a fallback to uniform weights over the non-empty classes.
template <class Ref>
std::vector<Ref> sample_batch(const std::vector<std::vector<Ref>>& pools,
                              const ClassSampler& sampler, std::size_t batch_size, Rng& rng) {
  std::vector<double> w = sampler.weights();
  if (w.size() != pools.size()) throw std::invalid_argument("sample_batch: class count mismatch");
  bool any_empty_weighted = false;
  double live = 0.0;
  for (std::size_t c = 0; c < pools.size(); ++c) {
    if (pools[c].empty() && w[c] > 0.0) any_empty_weighted = true;
    if (!pools[c].empty()) live += 1.0;
  }
  if (live == 0.0) throw std::invalid_argument("sample_batch: no data");
  if (any_empty_weighted) {
    for (std::size_t c = 0; c < pools.size(); ++c) w[c] = pools[c].empty() ? 0.0 : 1.0 / live;
  }
  // cumulative table for the categorical draw
  std::vector<double> cum(w.size());
  double acc = 0.0;
  for (std::size_t c = 0; c < w.size(); ++c) {
    acc += w[c];
    cum[c] = acc;
  }
  std::vector<Ref> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const double u = rng.uniform() * acc;
    std::size_t c = 0;
    while (c + 1 < cum.size() && u >= cum[c]) ++c;
    const auto& pool = pools[c];
    out.push_back(pool[rng.index(pool.size())]);
  }
  return out;
}

}  // namespace cfq
