#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "cfq/rng.hpp"
#include "cfq/tensor.hpp"

namespace cfq {

// Persistent trainable parameter. Optimizer state lives in optim.hpp and is
// attached by the training code; here we only need identity and the value.
struct Param;

namespace ad {

class Tape;

// Handle into a tape. Valid only while the owning tape is alive.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Tensor& grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
// which is a topological order, so the backward pass is a single reverse
// sweep. Gradients of shared subexpressions accumulate by summation.
class Tape {
 public:
  Var input(Tensor v) { return make(std::move(v), {}); }

  Var input_scalar(double v) { return input(Tensor::scalar(v)); }

  // Leaf bound to a persistent parameter; repeated calls with the same
  // parameter return the same node so gradients accumulate across uses.
  Var param(cfq::Param& p);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

  const Tensor& grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (!n.touched) {
      static thread_local Tensor zero;
      zero = Tensor(n.value.shape());
      return zero;
    }
    return grads_[id];
  }

  // Gradient of a bound parameter, or nullptr when the parameter was not
  // used on this tape (or backward has not reached it).
  const Tensor* grad_of(const cfq::Param& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return nullptr;
    const Node& n = nodes_[it->second];
    return n.touched ? &grads_[it->second] : nullptr;
  }

  void backward(Var root) {
    if (root.tape_ != this) throw std::logic_error("backward: var from another tape");
    const std::size_t rid = root.id_;
    if (nodes_[rid].value.size() != 1)
      throw std::logic_error("backward: root must be a scalar");
    grad_acc(rid).fill(1.0);
    for (std::size_t i = rid + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.touched && n.back) n.back(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    grads_.clear();
    bound_.clear();
  }

  // --- internals shared with the op implementations ---
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    std::function<void(Tape&, std::size_t)> back;
    bool touched = false;  // received any gradient during backward
  };

  Node& node(std::size_t id) { return nodes_[id]; }

  Tensor& grad_acc(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.touched) {
      grads_[id] = Tensor(n.value.shape());
      n.touched = true;
    }
    return grads_[id];
  }

  Var make(Tensor value, std::vector<std::size_t> parents,
           std::function<void(Tape&, std::size_t)> back = nullptr) {
    nodes_.push_back(Node{std::move(value), std::move(parents), std::move(back), false});
    grads_.emplace_back();
    return Var(this, nodes_.size() - 1);
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<const void*, std::size_t> bound_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }

namespace detail {

inline void same_tape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape()) throw std::logic_error(std::string(op) + ": vars from different tapes");
}

template <class F>
Var elementwise_binary(Var a, Var b, const char* name, F f,
                       std::function<void(Tape&, std::size_t, std::size_t, std::size_t)> back) {
  detail::same_tape(a, b, name);
  check_same_shape(a.value(), b.value(), name);
  Tape& t = *a.tape();
  Tensor out(a.value().shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  auto [pa, pb] = std::pair{a.id(), b.id()};
  return t.make(std::move(out), {pa, pb},
                [pa, pb, back](Tape& tp, std::size_t self) { back(tp, self, pa, pb); });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](Tape& t, std::size_t self, std::size_t pa, std::size_t pb) {
        const Tensor& g = t.grad_acc(self);
        Tensor& ga = t.grad_acc(pa);
        Tensor& gb = t.grad_acc(pb);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
      });
}

inline Var sub(Var a, Var b) {
  return detail::elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](Tape& t, std::size_t self, std::size_t pa, std::size_t pb) {
        const Tensor& g = t.grad_acc(self);
        Tensor& ga = t.grad_acc(pa);
        Tensor& gb = t.grad_acc(pb);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
      });
}

inline Var mul(Var a, Var b) {
  return detail::elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](Tape& t, std::size_t self, std::size_t pa, std::size_t pb) {
        const Tensor& g = t.grad_acc(self);
        const Tensor av = t.node(pa).value;  // copy: grad_acc may not alias values
        const Tensor& bv = t.node(pb).value;
        Tensor& ga = t.grad_acc(pa);
        Tensor& gb = t.grad_acc(pb);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * bv[i];
          gb[i] += g[i] * av[i];
        }
      });
}

inline Var square(Var a) { return mul(a, a); }

inline Var scale(Var a, double k) {
  Tape& t = *a.tape();
  Tensor out(a.value().shape());
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * av[i];
  std::size_t pa = a.id();
  return t.make(std::move(out), {pa}, [pa, k](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_acc(self);
    Tensor& ga = tp.grad_acc(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
  });
}

inline Var add_scalar(Var a, double k) {
  Tape& t = *a.tape();
  Tensor out(a.value().shape());
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + k;
  std::size_t pa = a.id();
  return t.make(std::move(out), {pa}, [pa](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_acc(self);
    Tensor& ga = tp.grad_acc(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// y = x W^T + b for x: [B x in] (or [in]), W: [out x in], b: [out].
inline Var linear(Var x, Var W, Var b) {
  detail::same_tape(x, W, "linear");
  detail::same_tape(x, b, "linear");
  const Tensor& xv = x.value();
  const Tensor& Wv = W.value();
  const Tensor& bv = b.value();
  const std::size_t in = xv.cols(), rows = xv.rows();
  const std::size_t out = Wv.rows();
  if (Wv.rank() != 2 || Wv.cols() != in)
    throw std::invalid_argument("linear: weight shape " + Wv.shape_str() +
                                " does not accept input " + xv.shape_str());
  if (bv.size() != out) throw std::invalid_argument("linear: bias size mismatch");

  Tensor y(xv.rank() == 2 ? std::vector<std::size_t>{rows, out} : std::vector<std::size_t>{out});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * in;
    double* yr = y.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = Wv.data() + o * in;
      double acc = bv[o];
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
      yr[o] = acc;
    }
  }
  std::size_t px = x.id(), pw = W.id(), pb = b.id();
  Tape& t = *x.tape();
  return t.make(std::move(y), {px, pw, pb},
                [px, pw, pb, rows, in, out](Tape& tp, std::size_t self) {
                  const Tensor g = tp.grad_acc(self);
                  const Tensor xv2 = tp.node(px).value;
                  const Tensor Wv2 = tp.node(pw).value;
                  Tensor& gx = tp.grad_acc(px);
                  Tensor& gw = tp.grad_acc(pw);
                  Tensor& gb = tp.grad_acc(pb);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* gr = g.data() + r * out;
                    const double* xr = xv2.data() + r * in;
                    double* gxr = gx.data() + r * in;
                    for (std::size_t o = 0; o < out; ++o) {
                      const double go = gr[o];
                      if (go == 0.0) continue;
                      const double* wo = Wv2.data() + o * in;
                      double* gwo = gw.data() + o * in;
                      for (std::size_t i = 0; i < in; ++i) {
                        gxr[i] += go * wo[i];
                        gwo[i] += go * xr[i];
                      }
                      gb[o] += go;
                    }
                  }
                });
}

// y = x W^T without bias.
inline Var affine(Var x, Var W) {
  detail::same_tape(x, W, "affine");
  const Tensor& xv = x.value();
  const Tensor& Wv = W.value();
  const std::size_t in = xv.cols(), rows = xv.rows();
  const std::size_t out = Wv.rows();
  if (Wv.rank() != 2 || Wv.cols() != in)
    throw std::invalid_argument("affine: weight shape " + Wv.shape_str() +
                                " does not accept input " + xv.shape_str());
  Tensor y(xv.rank() == 2 ? std::vector<std::size_t>{rows, out} : std::vector<std::size_t>{out});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * in;
    double* yr = y.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = Wv.data() + o * in;
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
      yr[o] = acc;
    }
  }
  std::size_t px = x.id(), pw = W.id();
  Tape& t = *x.tape();
  return t.make(std::move(y), {px, pw}, [px, pw, rows, in, out](Tape& tp, std::size_t self) {
    const Tensor g = tp.grad_acc(self);
    const Tensor xv2 = tp.node(px).value;
    const Tensor Wv2 = tp.node(pw).value;
    Tensor& gx = tp.grad_acc(px);
    Tensor& gw = tp.grad_acc(pw);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g.data() + r * out;
      const double* xr = xv2.data() + r * in;
      double* gxr = gx.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double go = gr[o];
        if (go == 0.0) continue;
        const double* wo = Wv2.data() + o * in;
        double* gwo = gw.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) {
          gxr[i] += go * wo[i];
          gwo[i] += go * xr[i];
        }
      }
    }
  });
}

namespace detail {

template <class F, class DF>
Var elementwise_unary(Var a, const char* /*name*/, F f, DF df) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  std::size_t pa = a.id();
  return t.make(std::move(out), {pa}, [pa, df](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_acc(self);
    const Tensor& yv = tp.node(self).value;
    const Tensor& xv = tp.node(pa).value;
    Tensor& ga = tp.grad_acc(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace detail

inline Var tanh_(Var a) {
  return detail::elementwise_unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return detail::elementwise_unary(
      a, "sigmoid",
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(Var a) {
  return detail::elementwise_unary(
      a, "relu", [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

// Row-wise softmax, stabilized by max subtraction.
inline Var softmax(Var a) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), k = av.cols();
  if (k < 1) throw std::invalid_argument("softmax: empty input");
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = av.data() + r * k;
    double* yr = out.data() + r * k;
    double mx = xr[0];
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, xr[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      z += yr[i];
    }
    for (std::size_t i = 0; i < k; ++i) yr[i] /= z;
  }
  std::size_t pa = a.id();
  return t.make(std::move(out), {pa}, [pa, rows, k](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_acc(self);
    const Tensor& yv = tp.node(self).value;
    Tensor& ga = tp.grad_acc(pa);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g.data() + r * k;
      const double* yr = yv.data() + r * k;
      double dot = 0.0;
      for (std::size_t i = 0; i < k; ++i) dot += gr[i] * yr[i];
      double* gar = ga.data() + r * k;
      for (std::size_t i = 0; i < k; ++i) gar[i] += yr[i] * (gr[i] - dot);
    }
  });
}

inline constexpr double kProbClampFloor = 1e-8;

// Mean negative log-likelihood of the labelled class; probabilities are
// clamped to [1e-8, 1] so the loss stays bounded. Inside the clamped region
// the gradient is zero.
inline Var cross_entropy(Var probs, std::span<const int> labels) {
  Tape& t = *probs.tape();
  const Tensor& pv = probs.value();
  const std::size_t rows = pv.rows(), k = pv.cols();
  if (labels.size() != rows) throw std::invalid_argument("cross_entropy: label count mismatch");
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    int l = labels[r];
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw std::out_of_range("cross_entropy: label out of range");
    double p = pv.data()[r * k + static_cast<std::size_t>(l)];
    loss += -std::log(std::min(std::max(p, kProbClampFloor), 1.0));
  }
  loss /= static_cast<double>(rows);
  std::size_t pa = probs.id();
  std::vector<int> ls(labels.begin(), labels.end());
  return t.make(Tensor::scalar(loss), {pa},
                [pa, rows, k, ls = std::move(ls)](Tape& tp, std::size_t self) {
                  const double g = tp.grad_acc(self)[0];
                  const Tensor& pv2 = tp.node(pa).value;
                  Tensor& ga = tp.grad_acc(pa);
                  for (std::size_t r = 0; r < rows; ++r) {
                    std::size_t idx = r * k + static_cast<std::size_t>(ls[r]);
                    double p = pv2[idx];
                    if (p > kProbClampFloor && p < 1.0 + 1e-15)
                      ga[idx] += g * (-1.0 / p) / static_cast<double>(rows);
                  }
                });
}

inline Var cross_entropy(Var probs, int label) {
  int ls[1] = {label};
  return cross_entropy(probs, std::span<const int>(ls, 1));
}

// Gradient reversal: identity forward, -lambda * grad backward.
inline Var grl(Var a, double lambda) {
  if (lambda < 0) throw std::invalid_argument("grl: lambda must be >= 0");
  Tape& t = *a.tape();
  Tensor out = a.value();
  std::size_t pa = a.id();
  return t.make(std::move(out), {pa}, [pa, lambda](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_acc(self);
    Tensor& ga = tp.grad_acc(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += -lambda * g[i];
  });
}

// Inverted dropout: zero with probability rate, scale survivors by 1/(1-rate).
inline Var dropout(Var a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  Tensor mask(av.shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = av[i] * mask[i];
  }
  std::size_t pa = a.id();
  return t.make(std::move(out), {pa}, [pa, mask = std::move(mask)](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_acc(self);
    Tensor& ga = tp.grad_acc(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

inline Var sum(Var a) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  std::size_t pa = a.id();
  return t.make(Tensor::scalar(s), {pa}, [pa](Tape& tp, std::size_t self) {
    const double g = tp.grad_acc(self)[0];
    Tensor& ga = tp.grad_acc(pa);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

inline Var mean_all(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

// Column scaling by fixed (non-differentiated) weights.
inline Var scale_cols(Var a, const std::vector<double>& w) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), k = av.cols();
  if (w.size() != k) throw std::invalid_argument("scale_cols: weight count mismatch");
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < k; ++c) out.data()[r * k + c] = av.data()[r * k + c] * w[c];
  std::size_t pa = a.id();
  return t.make(std::move(out), {pa}, [pa, w, rows, k](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_acc(self);
    Tensor& ga = tp.grad_acc(pa);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < k; ++c) ga[r * k + c] += g[r * k + c] * w[c];
  });
}

inline Var concat_cols(Var a, Var b) {
  detail::same_tape(a, b, "concat_cols");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) throw std::invalid_argument("concat_cols: row count mismatch");
  const std::size_t rows = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out(av.rank() == 2 || bv.rank() == 2
                 ? std::vector<std::size_t>{rows, ca + cb}
                 : std::vector<std::size_t>{ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ca; ++c) out.data()[r * (ca + cb) + c] = av.data()[r * ca + c];
    for (std::size_t c = 0; c < cb; ++c) out.data()[r * (ca + cb) + ca + c] = bv.data()[r * cb + c];
  }
  std::size_t pa = a.id(), pb = b.id();
  Tape& t = *a.tape();
  return t.make(std::move(out), {pa, pb}, [pa, pb, rows, ca, cb](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_acc(self);
    Tensor& ga = tp.grad_acc(pa);
    Tensor& gb = tp.grad_acc(pb);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * (ca + cb) + c];
      for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * (ca + cb) + ca + c];
    }
  });
}

// Stack row blocks of equal width.
inline Var concat_rows(const std::vector<Var>& blocks) {
  if (blocks.empty()) throw std::invalid_argument("concat_rows: no blocks");
  Tape& t = *blocks[0].tape();
  const std::size_t k = blocks[0].value().cols();
  std::size_t rows = 0;
  for (const Var& b : blocks) {
    if (b.value().cols() != k) throw std::invalid_argument("concat_rows: column mismatch");
    rows += b.value().rows();
  }
  Tensor out({rows, k});
  std::vector<std::size_t> ids, offsets, counts;
  std::size_t at = 0;
  for (const Var& b : blocks) {
    const Tensor& bv = b.value();
    const std::size_t n = bv.rows() * k;
    for (std::size_t i = 0; i < n; ++i) out[at * k + 0 + i] = bv[i];
    ids.push_back(b.id());
    offsets.push_back(at);
    counts.push_back(bv.rows());
    at += bv.rows();
  }
  return t.make(std::move(out), ids,
                [ids, offsets, counts, k](Tape& tp, std::size_t self) {
                  const Tensor& g = tp.grad_acc(self);
                  for (std::size_t b = 0; b < ids.size(); ++b) {
                    Tensor& gb = tp.grad_acc(ids[b]);
                    const std::size_t n = counts[b] * k;
                    const std::size_t base = offsets[b] * k;
                    for (std::size_t i = 0; i < n; ++i) gb[i] += g[base + i];
                  }
                });
}

inline Var slice_cols(Var a, std::size_t from, std::size_t len) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), k = av.cols();
  if (from + len > k) throw std::invalid_argument("slice_cols: out of range");
  Tensor out(av.rank() == 2 ? std::vector<std::size_t>{rows, len} : std::vector<std::size_t>{len});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < len; ++c) out[r * len + c] = av[r * k + from + c];
  std::size_t pa = a.id();
  Tape& t = *a.tape();
  return t.make(std::move(out), {pa}, [pa, rows, k, from, len](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_acc(self);
    Tensor& ga = tp.grad_acc(pa);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < len; ++c) ga[r * k + from + c] += g[r * len + c];
  });
}

// Row gather: out[r] = in[idx[r]]. Used to restore batch order after
// group-by-length packing; idx may repeat rows.
inline Var gather_rows(Var a, const std::vector<std::size_t>& idx) {
  const Tensor& av = a.value();
  const std::size_t k = av.cols();
  for (std::size_t i : idx)
    if (i >= av.rows()) throw std::out_of_range("gather_rows: index out of range");
  Tensor out({idx.size(), k});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] = av[idx[r] * k + c];
  std::size_t pa = a.id();
  Tape& t = *a.tape();
  return t.make(std::move(out), {pa}, [pa, idx, k](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_acc(self);
    Tensor& ga = tp.grad_acc(pa);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < k; ++c) ga[idx[r] * k + c] += g[r * k + c];
  });
}

// Repeat a [B x 1] column k times -> [B x k].
inline Var tile_cols(Var a, std::size_t k) {
  const Tensor& av = a.value();
  if (av.cols() != 1) throw std::invalid_argument("tile_cols: expects a single column");
  const std::size_t rows = av.rows();
  Tensor out({rows, k});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] = av[r];
  std::size_t pa = a.id();
  Tape& t = *a.tape();
  return t.make(std::move(out), {pa}, [pa, rows, k](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_acc(self);
    Tensor& ga = tp.grad_acc(pa);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += g[r * k + c];
      ga[r] += s;
    }
  });
}

}  // namespace ad
}  // namespace cfq
