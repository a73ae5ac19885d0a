#pragma once

// Reverse-mode automatic differentiation over a recorded tape.
//
// Every differentiable operation appends a node holding its forward value
// and a closure that pushes the node's adjoint onto its inputs. Nodes are
// appended in evaluation order, so the node list is a topological order and
// backward() is a single reverse sweep.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <type_traits>
#include <vector>

#include "eyenet/errors.hpp"
#include "eyenet/kernels.hpp"
#include "eyenet/param_store.hpp"
#include "eyenet/tensor.hpp"

namespace eyenet {

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T = float>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor4<T>& value() const { return tape->node(id).value; }
  const Shape& shape() const { return value().shape(); }
};

template <typename T = float>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor4<T> value;
    Tensor4<T> grad;
    Backward backward;
    bool requires_grad = false;
    std::string param;  // set on parameter leaves
    std::string scope;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives a gradient (input images, targets).
  Var<T> constant(Tensor4<T> value) { return leaf("constant", std::move(value), false); }

  // Leaf that receives a gradient.
  Var<T> variable(Tensor4<T> value) { return leaf("variable", std::move(value), true); }

  // Leaf bound to a ParamStore entry; repeated lookups of the same name
  // return the same node so gradients from shared uses accumulate.
  Var<T> param(const ParamStore<T>& store, const std::string& name) {
    if (auto it = params_.find(name); it != params_.end()) return Var<T>{this, it->second};
    Var<T> v = leaf("param", store.at(name).value, grad_enabled_);
    nodes_[v.id].param = name;
    params_.emplace(name, v.id);
    return v;
  }

  // Routes subsequent param(name) lookups to an existing node (used to
  // differentiate with respect to one parameter in isolation).
  void bind(const std::string& name, Var<T> v) {
    nodes_[v.id].param = name;
    params_[name] = v.id;
  }

  // Appends an operation node. `backward` may be empty for ops with no
  // differentiable inputs.
  Var<T> record(std::string op, std::vector<std::size_t> inputs, Tensor4<T> value, Backward backward) {
    bool rg = false;
    for (std::size_t i : inputs) rg = rg || nodes_.at(i).requires_grad;
    Node n;
    n.op = std::move(op);
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.requires_grad = rg;
    if (rg) n.backward = std::move(backward);
    n.scope = scope_;
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  // Gradient buffer of an input, allocated on first touch; null when the
  // input does not require a gradient.
  Tensor4<T>* grad_target(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty() && n.value.size() != 0) n.grad = Tensor4<T>(n.value.shape());
    return &n.grad;
  }

  const Tensor4<T>& upstream(std::size_t id) const { return nodes_[id].grad; }

  // Reverse sweep from a scalar loss. Each reachable node is visited once.
  void backward(Var<T> loss) {
    if (!nodes_.at(loss.id).value.shape().is_scalar()) {
      throw ContractError("backward: loss must be scalar, got " + nodes_[loss.id].value.shape().str());
    }
    for (auto& n : nodes_) n.grad = Tensor4<T>();
    Tensor4<T>* seed = grad_target(loss.id);
    if (!seed) return;
    (*seed)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  // Gradient of the last backward() with respect to v; zeros when v was not
  // reached.
  Tensor4<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor4<T>(n.value.shape());
    return n.grad;
  }

  // Adds parameter-leaf gradients into the store's gradient buffers.
  void accumulate_param_grads(ParamStore<T>& store) const {
    for (const auto& [name, id] : params_) {
      const Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      auto& g = store.at(name).grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  // Branch signature: non-smooth ops (sign of leaky-relu inputs, pooling
  // argmaxes) fold their discrete decisions into this hash when tracking is
  // enabled. Two forwards with equal signatures took the same smooth piece.
  void set_branch_tracking(bool on) { track_branches_ = on; }
  bool branch_tracking() const { return track_branches_; }
  std::uint64_t branch_signature() const { return signature_; }
  void mix_branch(std::uint64_t v) {
    signature_ ^= v + 0x9e3779b97f4a7c15ULL + (signature_ << 6) + (signature_ >> 2);
  }

  const std::string& scope() const { return scope_; }

  // RAII scope label attached to nodes recorded while alive.
  class ScopeGuard {
   public:
    ScopeGuard(Tape& t, const std::string& name) : tape_(t), saved_(t.scope_) {
      t.scope_ = saved_.empty() ? name : saved_ + "/" + name;
    }
    ~ScopeGuard() { tape_.scope_ = saved_; }
    ScopeGuard(const ScopeGuard&) = delete;
    ScopeGuard& operator=(const ScopeGuard&) = delete;

   private:
    Tape& tape_;
    std::string saved_;
  };

 private:
  Var<T> leaf(const char* op, Tensor4<T> value, bool requires_grad) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.scope = scope_;
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> params_;
  std::string scope_;
  bool grad_enabled_ = true;
  bool track_branches_ = false;
  std::uint64_t signature_ = 0;
};

template <typename T>
void backward(Tape<T>& tape, Var<T> loss) {
  tape.backward(loss);
}

// ---------------------------------------------------------------------------
// Differentiable operations

namespace detail {

template <typename T>
void same_tape(Var<T> a, Var<T> b, const char* what) {
  if (a.tape != b.tape) throw ContractError(std::string(what) + ": operands live on different tapes");
}

}  // namespace detail

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::type_identity_t<std::optional<Var<T>>> bias, const ConvGeometry& g) {
  detail::same_tape(x, kernel, "conv2d");
  Tape<T>& t = *x.tape;
  const Tensor4<T>* b = bias ? &bias->value() : nullptr;
  Tensor4<T> out = kernels::conv2d(x.value(), kernel.value(), b, g);
  std::vector<std::size_t> ins{x.id, kernel.id};
  if (bias) ins.push_back(bias->id);
  const bool has_bias = bias.has_value();
  return t.record("conv2d", ins, std::move(out), [x = x.id, k = kernel.id, bid = bias ? bias->id : 0, has_bias, g](Tape<T>& tp, std::size_t self) {
    kernels::conv2d_backward(tp.node(x).value, tp.node(k).value, g, tp.upstream(self), tp.grad_target(x),
                             tp.grad_target(k), has_bias ? tp.grad_target(bid) : nullptr);
  });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  Tape<T>& t = *x.tape;
  if (t.branch_tracking()) {
    std::uint64_t h = 0;
    const auto& v = x.value();
    for (std::size_t i = 0; i < v.size(); ++i) h = h * 1099511628211ULL + (v[i] > T(0) ? 2 : 1);
    t.mix_branch(h);
  }
  return t.record("leaky_relu", {x.id}, kernels::leaky_relu(x.value(), slope), [x = x.id, slope](Tape<T>& tp, std::size_t self) {
    if (auto* d = tp.grad_target(x)) kernels::leaky_relu_backward(tp.node(x).value, slope, tp.upstream(self), *d);
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return x.tape->record("sigmoid", {x.id}, kernels::sigmoid(x.value()), [x = x.id](Tape<T>& tp, std::size_t self) {
    if (auto* d = tp.grad_target(x)) kernels::sigmoid_backward(tp.node(self).value, tp.upstream(self), *d);
  });
}

template <typename T>
Var<T> softmax_channels(Var<T> x) {
  return x.tape->record("softmax_channels", {x.id}, kernels::softmax_channels(x.value()),
                        [x = x.id](Tape<T>& tp, std::size_t self) {
                          if (auto* d = tp.grad_target(x)) {
                            kernels::softmax_channels_backward(tp.node(self).value, tp.upstream(self), *d);
                          }
                        });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  return x.tape->record("global_avg_pool", {x.id}, kernels::global_avg_pool(x.value()),
                        [x = x.id](Tape<T>& tp, std::size_t self) {
                          if (auto* d = tp.grad_target(x)) {
                            kernels::global_avg_pool_backward(tp.node(x).value.shape(), tp.upstream(self), *d);
                          }
                        });
}

template <typename T>
Var<T> global_max_pool(Var<T> x) {
  Tape<T>& t = *x.tape;
  std::vector<std::size_t> arg;
  Tensor4<T> out = kernels::global_max_pool(x.value(), &arg);
  if (t.branch_tracking()) {
    std::uint64_t h = 0;
    for (std::size_t a : arg) h = h * 1099511628211ULL + a + 1;
    t.mix_branch(h);
  }
  return t.record("global_max_pool", {x.id}, std::move(out), [x = x.id, arg = std::move(arg)](Tape<T>& tp, std::size_t self) {
    if (auto* d = tp.grad_target(x)) kernels::global_max_pool_backward(tp.node(x).value.shape(), arg, tp.upstream(self), *d);
  });
}

template <typename T>
Var<T> channel_mean_max(Var<T> x) {
  Tape<T>& t = *x.tape;
  std::vector<std::size_t> arg;
  Tensor4<T> out = kernels::channel_mean_max(x.value(), &arg);
  if (t.branch_tracking()) {
    std::uint64_t h = 0;
    for (std::size_t a : arg) h = h * 1099511628211ULL + a + 1;
    t.mix_branch(h);
  }
  return t.record("channel_mean_max", {x.id}, std::move(out), [x = x.id, arg = std::move(arg)](Tape<T>& tp, std::size_t self) {
    if (auto* d = tp.grad_target(x)) kernels::channel_mean_max_backward(tp.node(x).value.shape(), arg, tp.upstream(self), *d);
  });
}

template <typename T>
Var<T> avg_pool2d(Var<T> x, std::size_t window, std::size_t stride, std::size_t padding = 0) {
  return x.tape->record("avg_pool2d", {x.id}, kernels::avg_pool2d(x.value(), window, stride, padding),
                        [x = x.id, window, stride, padding](Tape<T>& tp, std::size_t self) {
                          if (auto* d = tp.grad_target(x)) {
                            kernels::avg_pool2d_backward(tp.node(x).value.shape(), window, stride, padding,
                                                         tp.upstream(self), *d);
                          }
                        });
}

template <typename T>
Var<T> upsample_nearest(Var<T> x, std::size_t factor) {
  return x.tape->record("upsample_nearest", {x.id}, kernels::upsample_nearest(x.value(), factor),
                        [x = x.id, factor](Tape<T>& tp, std::size_t self) {
                          if (auto* d = tp.grad_target(x)) {
                            kernels::upsample_nearest_backward(tp.node(x).value.shape(), factor, tp.upstream(self), *d);
                          }
                        });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "concat_channels");
  const std::size_t split = a.shape().c;
  return a.tape->record("concat_channels", {a.id, b.id}, kernels::concat_channels(a.value(), b.value()),
                        [a = a.id, b = b.id, split](Tape<T>& tp, std::size_t self) {
                          if (auto* d = tp.grad_target(a)) kernels::take_channel_block(tp.upstream(self), 0, *d);
                          if (auto* d = tp.grad_target(b)) kernels::take_channel_block(tp.upstream(self), split, *d);
                        });
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count) {
  return x.tape->record("slice_channels", {x.id}, kernels::slice_channels(x.value(), begin, count),
                        [x = x.id, begin](Tape<T>& tp, std::size_t self) {
                          if (auto* d = tp.grad_target(x)) kernels::add_channel_block(tp.upstream(self), begin, *d);
                        });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "add");
  return a.tape->record("add", {a.id, b.id}, kernels::add(a.value(), b.value()), [a = a.id, b = b.id](Tape<T>& tp, std::size_t self) {
    const Shape& sa = tp.node(a).value.shape();
    const Shape& sb = tp.node(b).value.shape();
    if (auto* d = tp.grad_target(a)) kernels::reduce_broadcast_grad<T>(tp.upstream(self), sa, nullptr, sb, *d, true);
    if (auto* d = tp.grad_target(b)) kernels::reduce_broadcast_grad<T>(tp.upstream(self), sb, nullptr, sa, *d, false);
  });
}

// Elementwise product with broadcasting (gates: (n,c,1,1) or (n,1,h,w)).
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "mul");
  return a.tape->record("mul", {a.id, b.id}, kernels::mul(a.value(), b.value()), [a = a.id, b = b.id](Tape<T>& tp, std::size_t self) {
    const Tensor4<T>& va = tp.node(a).value;
    const Tensor4<T>& vb = tp.node(b).value;
    if (auto* d = tp.grad_target(a)) kernels::reduce_broadcast_grad(tp.upstream(self), va.shape(), &vb, vb.shape(), *d, true);
    if (auto* d = tp.grad_target(b)) kernels::reduce_broadcast_grad(tp.upstream(self), vb.shape(), &va, va.shape(), *d, false);
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor4<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  return x.tape->record("scale", {x.id}, std::move(out), [x = x.id, factor](Tape<T>& tp, std::size_t self) {
    if (auto* d = tp.grad_target(x)) {
      const auto& g = tp.upstream(self);
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += factor * g[i];
    }
  });
}

// Sum of all elements as a 1x1x1x1 scalar.
template <typename T>
Var<T> sum(Var<T> x) {
  return x.tape->record("sum", {x.id}, Tensor4<T>::scalar(static_cast<T>(kernels::sum_all(x.value()))),
                        [x = x.id](Tape<T>& tp, std::size_t self) {
                          if (auto* d = tp.grad_target(x)) {
                            const T g = tp.upstream(self)[0];
                            for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += g;
                          }
                        });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

}  // namespace eyenet
