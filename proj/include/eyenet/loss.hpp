#pragma once

// Training objective: per head, categorical cross-entropy plus the mean of
// per-class soft Dice losses, both on softmax probabilities; summed over the
// three side heads and the fused head.
//
//   DL_c = 1 - (2 sum(y p) + eps) / (sum(y) + sum(p) + eps)       sums over batch and pixels of class c
//   CE   = -(1/N) sum_pixels sum_c y log((p + d) / (1 + d)),  d = 1e-8, N = batch * h * w
//
// The (1 + d) normalizer only shifts CE by a constant so that a perfect
// prediction scores exactly 0; gradients equal those of -y log(p + d).

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eyenet/errors.hpp"
#include "eyenet/network.hpp"
#include "eyenet/tape.hpp"
#include "eyenet/tensor.hpp"

namespace eyenet {

inline constexpr double kLogGuard = 1e-8;

struct LossOptions {
  double epsilon = 1e-6;
  // Weight of side1, side2, side3, fused in the total.
  std::array<double, 4> head_weights{1.0, 1.0, 1.0, 1.0};
  bool include_background = true;
};

struct LossBreakdown {
  std::array<double, 4> dice_per_class{};  // fused head
  double ce = 0.0;                         // fused head
  std::array<double, 4> per_output{};      // weighted contributions: side1..3, fused
  double total = 0.0;
  double epsilon = 1e-6;
};

namespace detail {

template <typename T>
void check_prob_target(const Tensor4<T>& pred, const Tensor4<T>& target, const char* what) {
  if (pred.shape() != target.shape()) {
    throw ShapeError(std::string(what) + ": prediction " + pred.shape().str() + " vs target " + target.shape().str());
  }
  const Shape& s = pred.shape();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < s.plane(); ++p) {
      double ps = 0.0, ts = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        ps += double(pred.plane(n, c)[p]);
        const T t = target.plane(n, c)[p];
        if (t != T(0) && t != T(1)) throw ContractError(std::string(what) + ": target is not one-hot");
        ts += double(t);
      }
      if (std::abs(ps - 1.0) > 1e-5) {
        throw ContractError(std::string(what) + ": prediction is not normalized (channel sum " + std::to_string(ps) + ")");
      }
      if (ts != 1.0) throw ContractError(std::string(what) + ": target is not one-hot");
    }
  }
}

struct DiceSums {
  std::vector<double> inter, ysum, psum;
};

template <typename T>
DiceSums dice_sums(const Tensor4<T>& pred, const Tensor4<T>& target) {
  const Shape& s = pred.shape();
  DiceSums d{std::vector<double>(s.c), std::vector<double>(s.c), std::vector<double>(s.c)};
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* pp = pred.plane(n, c);
      const T* tp = target.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        d.inter[c] += double(tp[i]) * double(pp[i]);
        d.ysum[c] += double(tp[i]);
        d.psum[c] += double(pp[i]);
      }
    }
  }
  return d;
}

}  // namespace detail

// Dice loss of one class channel: 1 - (2 sum(y p) + eps) / (sum(y) + sum(p) + eps).
template <typename T>
double dice_loss_channel(std::span<const T> pred, std::span<const T> target, double epsilon = 1e-6) {
  if (pred.size() != target.size()) throw ShapeError("dice_loss_channel: length mismatch");
  double inter = 0.0, ys = 0.0, ps = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += double(target[i]) * double(pred[i]);
    ys += double(target[i]);
    ps += double(pred[i]);
  }
  return 1.0 - (2.0 * inter + epsilon) / (ys + ps + epsilon);
}

// Per-class Dice loss on probabilities.
template <typename T>
std::vector<double> dice_loss(const Tensor4<T>& pred, const Tensor4<T>& target, double epsilon = 1e-6) {
  detail::check_prob_target(pred, target, "dice_loss");
  const auto d = detail::dice_sums(pred, target);
  std::vector<double> out(pred.shape().c);
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c] = 1.0 - (2.0 * d.inter[c] + epsilon) / (d.ysum[c] + d.psum[c] + epsilon);
  }
  return out;
}

template <typename T>
double cross_entropy(const Tensor4<T>& pred, const Tensor4<T>& target) {
  detail::check_prob_target(pred, target, "cross_entropy");
  const Shape& s = pred.shape();
  double acc = 0.0;
  const double norm = std::log1p(kLogGuard);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* pp = pred.plane(n, c);
      const T* tp = target.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        if (tp[i] != T(0)) acc -= double(tp[i]) * (std::log(double(pp[i]) + kLogGuard) - norm);
      }
    }
  }
  return acc / double(s.n * s.plane());
}

// Differentiable per-class Dice loss, shape (1, C, 1, 1).
template <typename T>
Var<T> dice_loss(Var<T> pred, const Tensor4<T>& target, double epsilon = 1e-6) {
  const std::vector<double> dl = dice_loss(pred.value(), target, epsilon);
  Tensor4<T> out(Shape{1, dl.size(), 1, 1});
  for (std::size_t c = 0; c < dl.size(); ++c) out[c] = static_cast<T>(dl[c]);
  return pred.tape->record("dice_loss", {pred.id}, std::move(out), [p = pred.id, target, epsilon](Tape<T>& tp, std::size_t self) {
    Tensor4<T>* d = tp.grad_target(p);
    if (!d) return;
    const Tensor4<T>& pv = tp.node(p).value;
    const Tensor4<T>& g = tp.upstream(self);
    const auto sums = detail::dice_sums(pv, target);
    const Shape& s = pv.shape();
    for (std::size_t c = 0; c < s.c; ++c) {
      const double num = 2.0 * sums.inter[c] + epsilon;
      const double den = sums.ysum[c] + sums.psum[c] + epsilon;
      // d/dp [1 - num/den] = -(2y den - num) / den^2
      const double gc = double(g[c]);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* tpl = target.plane(n, c);
        T* dp = d->plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          dp[i] += static_cast<T>(-gc * (2.0 * double(tpl[i]) * den - num) / (den * den));
        }
      }
    }
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> pred, const Tensor4<T>& target) {
  const double ce = cross_entropy(pred.value(), target);
  return pred.tape->record("cross_entropy", {pred.id}, Tensor4<T>::scalar(static_cast<T>(ce)),
                           [p = pred.id, target](Tape<T>& tp, std::size_t self) {
                             Tensor4<T>* d = tp.grad_target(p);
                             if (!d) return;
                             const Tensor4<T>& pv = tp.node(p).value;
                             const Shape& s = pv.shape();
                             const double g = double(tp.upstream(self)[0]) / double(s.n * s.plane());
                             for (std::size_t i = 0; i < pv.size(); ++i) {
                               if (target[i] != T(0)) {
                                 (*d)[i] += static_cast<T>(-g * double(target[i]) / (double(pv[i]) + kLogGuard));
                               }
                             }
                           });
}

template <typename T>
struct TotalLoss {
  Var<T> total;
  LossBreakdown breakdown;
};

// CE + mean Dice on each head's softmax, weighted and summed over heads.
template <typename T>
TotalLoss<T> total_loss(const ForwardOutputs<Var<T>>& logits, const Tensor4<T>& target, const LossOptions& opt = {}) {
  LossBreakdown bd;
  bd.epsilon = opt.epsilon;
  const auto heads = logits.all();
  std::optional<Var<T>> total;
  for (std::size_t o = 0; o < heads.size(); ++o) {
    Var<T> prob = softmax_channels(heads[o]);
    Var<T> ce = cross_entropy(prob, target);
    Var<T> dice = dice_loss(prob, target, opt.epsilon);
    const std::size_t first = opt.include_background ? 0 : 1;
    Var<T> dice_mean = mean(first == 0 ? dice : slice_channels(dice, first, dice.shape().c - first));
    Var<T> head = add(ce, dice_mean);
    bd.per_output[o] = opt.head_weights[o] * double(head.value().item());
    if (o == 3) {
      bd.ce = double(ce.value().item());
      for (std::size_t c = 0; c < 4 && c < dice.shape().c; ++c) bd.dice_per_class[c] = double(dice.value()[c]);
    }
    if (opt.head_weights[o] == 0.0) continue;
    Var<T> weighted = opt.head_weights[o] == 1.0 ? head : scale(head, static_cast<T>(opt.head_weights[o]));
    total = total ? add(*total, weighted) : weighted;
  }
  if (!total) throw ConfigError("total_loss: every head weight is zero");
  for (double v : bd.per_output) bd.total += v;
  return TotalLoss<T>{*total, bd};
}

}  // namespace eyenet
