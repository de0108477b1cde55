#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "seqdab/conv.hpp"
#include "seqdab/dab.hpp"
#include "seqdab/errors.hpp"
#include "seqdab/nn_ops.hpp"
#include "seqdab/tensor.hpp"

namespace seqdab {

// Reverse-mode tape. Ops append nodes holding the forward value and a
// pull closure that routes the node's gradient to its parents. Nodes are
// appended in topological order, so backward is a single reverse sweep.
template <typename S>
class Tape {
 public:
  using Pull = std::function<void(Tape&, const Tensor<S>&)>;

  int push(Tensor<S> value, bool requires_grad, Pull pull = nullptr) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<S>& value(int id) const { return at(id).value; }
  bool requires_grad(int id) const { return at(id).requires_grad; }

  const Tensor<S>& grad(int id) const {
    const Node& n = at(id);
    check(!n.grad.empty(), "gradient not populated; run backward first");
    return n.grad;
  }

  bool has_grad(int id) const { return !at(id).grad.empty(); }

  void accumulate(int id, Tensor<S> g) {
    Node& n = at(id);
    if (!n.requires_grad) return;
    if (n.grad.empty())
      n.grad = std::move(g);
    else
      n.grad += g;
  }

  // Reverse sweep from a scalar root. Seeds the root with 1.
  void backward(int root) {
    check(!nodes_.empty(), "backward on an empty tape");
    check(!swept_, "backward already ran on this tape");
    swept_ = true;
    Node& r = at(root);
    check_shape(r.value.numel() == 1, "backward root must be scalar");
    check(r.requires_grad, "backward root does not depend on any parameter");
    r.grad = Tensor<S>::full(r.value.shape(), S(1));
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.grad.empty() && n.pull) {
        n.pull(*this, n.grad);
        n.pull = nullptr;
      }
    }
  }

  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    Pull pull;
    bool requires_grad = false;
  };

  Node& at(int id) {
    check(id >= 0 && id < static_cast<int>(nodes_.size()), "bad tape id");
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& at(int id) const {
    check(id >= 0 && id < static_cast<int>(nodes_.size()), "bad tape id");
    return nodes_[static_cast<std::size_t>(id)];
  }

  std::vector<Node> nodes_;
  bool recording_ = true;
  bool swept_ = false;
};

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<S>& value() const { return tape->value(id); }
  const Tensor<S>& grad() const { return tape->grad(id); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

template <typename S>
Var<S> leaf(Tape<S>& t, Tensor<S> v, bool requires_grad = false) {
  return Var<S>{&t, t.push(std::move(v), requires_grad && t.recording())};
}

namespace detail {

template <typename S>
Var<S> record(Tape<S>& t, Tensor<S> value, bool req,
              typename Tape<S>::Pull pull) {
  if (!t.recording()) req = false;
  return Var<S>{&t, t.push(std::move(value), req, req ? std::move(pull) : nullptr)};
}

}  // namespace detail

template <typename S>
Var<S> relu(Var<S> x) {
  Tape<S>& t = *x.tape;
  Tensor<S> y = relu(t.value(x.id));
  return detail::record(
      t, std::move(y), x.requires_grad(),
      [xid = x.id](Tape<S>& tp, const Tensor<S>& g) {
        tp.accumulate(xid, relu_backward(tp.value(xid), g));
      });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  Tensor<S> y = t.value(a.id) + t.value(b.id);
  return detail::record(
      t, std::move(y), a.requires_grad() || b.requires_grad(),
      [aid = a.id, bid = b.id](Tape<S>& tp, const Tensor<S>& g) {
        tp.accumulate(aid, g);
        tp.accumulate(bid, g);
      });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  Tensor<S> y = t.value(a.id) - t.value(b.id);
  return detail::record(
      t, std::move(y), a.requires_grad() || b.requires_grad(),
      [aid = a.id, bid = b.id](Tape<S>& tp, const Tensor<S>& g) {
        tp.accumulate(aid, g);
        tp.accumulate(bid, g * S(-1));
      });
}

template <typename S>
Var<S> concat_channels(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  Tensor<S> y = concat_channels(t.value(a.id), t.value(b.id));
  const int off = t.value(a.id).rank() - 4;
  const int ca = t.value(a.id).dim(off);
  return detail::record(
      t, std::move(y), a.requires_grad() || b.requires_grad(),
      [aid = a.id, bid = b.id, ca](Tape<S>& tp, const Tensor<S>& g) {
        Tensor<S> ga, gb;
        split_channels(g, ca, &ga, &gb);
        tp.accumulate(aid, std::move(ga));
        tp.accumulate(bid, std::move(gb));
      });
}

// Weights (and optional bias) are tape variables so their gradients land
// on the parameter leaves. The spec captured here freezes the geometry;
// values are read from the tape at pull time.
template <typename S>
Var<S> conv2d_per_frame(Var<S> x, Var<S> w, Var<S> bias, int stride,
                        int padding) {
  Tape<S>& t = *x.tape;
  const Tensor<S>& wt = t.value(w.id);
  ConvSpec<S> spec;
  spec.out_channels = wt.dim(0);
  spec.in_channels = wt.dim(1);
  spec.kernel = wt.dim(3);
  spec.stride = stride;
  spec.padding = padding;
  spec.weights = wt;
  if (bias.valid()) spec.bias = t.value(bias.id);
  Tensor<S> y = conv2d_per_frame(t.value(x.id), spec);
  const bool req =
      x.requires_grad() || w.requires_grad() || (bias.valid() && bias.requires_grad());
  return detail::record(
      t, std::move(y), req,
      [xid = x.id, wid = w.id, bid = bias.valid() ? bias.id : -1,
       spec = std::move(spec)](Tape<S>& tp, const Tensor<S>& g) {
        Tensor<S> gx, gw, gb;
        const bool want_x = tp.requires_grad(xid);
        const bool want_b = bid >= 0 && tp.requires_grad(bid);
        conv2d_per_frame_backward(tp.value(xid), spec, g, want_x ? &gx : nullptr,
                                  tp.requires_grad(wid) ? &gw : nullptr,
                                  want_b ? &gb : nullptr);
        if (want_x) tp.accumulate(xid, std::move(gx));
        if (tp.requires_grad(wid)) tp.accumulate(wid, std::move(gw));
        if (want_b) tp.accumulate(bid, std::move(gb));
      });
}

template <typename S>
Var<S> dab(Var<S> x, const DabConfig& cfg) {
  Tape<S>& t = *x.tape;
  const bool req = x.requires_grad();
  std::shared_ptr<DabSigns> signs;
  if (req && cfg.mode == DabMode::Magnitude) signs = std::make_shared<DabSigns>();
  Tensor<S> y = dab_forward(t.value(x.id), cfg, signs.get());
  return detail::record(
      t, std::move(y), req,
      [xid = x.id, cfg, signs](Tape<S>& tp, const Tensor<S>& g) {
        tp.accumulate(xid, dab_backward(g, cfg, signs.get()));
      });
}

template <typename S>
Var<S> batch_norm(Var<S> x, Var<S> gamma, Var<S> beta, BnState<S>* state,
                  bool training) {
  Tape<S>& t = *x.tape;
  const bool req =
      x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  auto ctx = std::make_shared<BnCtx>();
  Tensor<S> y = batch_norm(t.value(x.id), t.value(gamma.id), t.value(beta.id),
                           state, training, (req && training) ? ctx.get() : nullptr);
  if (!training) {
    return detail::record(
        t, std::move(y), req,
        [](Tape<S>&, const Tensor<S>&) {
          throw Error("backward through eval-mode batch norm is not supported");
        });
  }
  return detail::record(
      t, std::move(y), req,
      [xid = x.id, gid = gamma.id, bid = beta.id, ctx](Tape<S>& tp,
                                                       const Tensor<S>& g) {
        Tensor<S> gx, gg, gb;
        batch_norm_backward(tp.value(xid), tp.value(gid), *ctx, g,
                            tp.requires_grad(xid) ? &gx : nullptr,
                            tp.requires_grad(gid) ? &gg : nullptr,
                            tp.requires_grad(bid) ? &gb : nullptr);
        if (tp.requires_grad(xid)) tp.accumulate(xid, std::move(gx));
        if (tp.requires_grad(gid)) tp.accumulate(gid, std::move(gg));
        if (tp.requires_grad(bid)) tp.accumulate(bid, std::move(gb));
      });
}

template <typename S>
Var<S> global_avg_pool(Var<S> x) {
  Tape<S>& t = *x.tape;
  Tensor<S> y = global_avg_pool(t.value(x.id));
  Shape xs = t.value(x.id).shape();
  return detail::record(
      t, std::move(y), x.requires_grad(),
      [xid = x.id, xs = std::move(xs)](Tape<S>& tp, const Tensor<S>& g) {
        tp.accumulate(xid, global_avg_pool_backward(xs, g));
      });
}

template <typename S>
Var<S> max_pool_per_frame(Var<S> x, int k, int stride, int pad) {
  Tape<S>& t = *x.tape;
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  Tensor<S> y = max_pool_per_frame(t.value(x.id), k, stride, pad,
                                   x.requires_grad() ? argmax.get() : nullptr);
  Shape xs = t.value(x.id).shape();
  return detail::record(
      t, std::move(y), x.requires_grad(),
      [xid = x.id, xs = std::move(xs), argmax](Tape<S>& tp, const Tensor<S>& g) {
        tp.accumulate(xid, max_pool_backward(xs, g, *argmax));
      });
}

template <typename S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> bias) {
  Tape<S>& t = *x.tape;
  Tensor<S> y = linear(t.value(x.id), t.value(w.id),
                       bias.valid() ? t.value(bias.id) : Tensor<S>());
  const bool req =
      x.requires_grad() || w.requires_grad() || (bias.valid() && bias.requires_grad());
  return detail::record(
      t, std::move(y), req,
      [xid = x.id, wid = w.id, bid = bias.valid() ? bias.id : -1](
          Tape<S>& tp, const Tensor<S>& g) {
        Tensor<S> gx, gw, gb;
        const bool want_b = bid >= 0 && tp.requires_grad(bid);
        linear_backward(tp.value(xid), tp.value(wid), g,
                        tp.requires_grad(xid) ? &gx : nullptr,
                        tp.requires_grad(wid) ? &gw : nullptr,
                        want_b ? &gb : nullptr);
        if (tp.requires_grad(xid)) tp.accumulate(xid, std::move(gx));
        if (tp.requires_grad(wid)) tp.accumulate(wid, std::move(gw));
        if (want_b) tp.accumulate(bid, std::move(gb));
      });
}

// Mean cross entropy as a scalar tape node.
template <typename S>
Var<S> softmax_ce(Var<S> logits, const std::vector<int>& labels) {
  Tape<S>& t = *logits.tape;
  auto glogits = std::make_shared<Tensor<S>>();
  const bool req = logits.requires_grad();
  const double loss =
      softmax_cross_entropy(t.value(logits.id), labels, req ? glogits.get() : nullptr);
  Tensor<S> v({1});
  v[0] = static_cast<S>(loss);
  return detail::record(
      t, std::move(v), req,
      [lid = logits.id, glogits](Tape<S>& tp, const Tensor<S>& g) {
        tp.accumulate(lid, *glogits * g[0]);
      });
}

// Fixed-projection scalar readout, the reduction used by gradient checks.
template <typename S>
Var<S> weighted_sum(Var<S> x, const Tensor<S>& w) {
  Tape<S>& t = *x.tape;
  check_shape(t.value(x.id).same_shape(w), "weighted_sum shape mismatch");
  Tensor<S> v({1});
  v[0] = static_cast<S>((t.value(x.id).map().template cast<double>() *
                         w.map().template cast<double>())
                            .sum());
  return detail::record(
      t, std::move(v), x.requires_grad(),
      [xid = x.id, w](Tape<S>& tp, const Tensor<S>& g) {
        tp.accumulate(xid, w * g[0]);
      });
}

}  // namespace seqdab
